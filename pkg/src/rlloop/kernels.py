"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
versions are used. Set ``RLLOOP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("RLLOOP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if compiled_backend is not None else "python"

simulate_fixed = backend.simulate_fixed
gae = backend.gae
mlp_forward = backend.mlp_forward
