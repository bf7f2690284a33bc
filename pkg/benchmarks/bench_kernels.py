"""Compare the compiled and pure-Python kernel backends.

Run from the repo root after building the extension::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N time for each backend and the
speedup. Also checks that both backends return the same numbers.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from rlloop import kernels
from rlloop.core import SliceConfig
from rlloop.ppo import _as_input, init_params, sample_action


def cases():
    rng = np.random.default_rng(0)
    cfg = SliceConfig(traffic_std=4.0, degradation_exponent=16.0)
    n = 9000
    arrivals = np.floor(np.maximum(rng.normal(5, 4, n), 0) + 0.5).astype(np.int64)
    noise = rng.uniform(-0.02, 0.02, n)
    sim_args = (arrivals, noise, 1800.0, cfg.per_ue_demand_mc, cfg.per_ue_target_rate_mbps, 16.0, 2)
    T = 32
    gae_args = (rng.random(T), rng.random(T), rng.random(T), np.zeros(T), 0.99, 0.95)
    params = init_params(rng)
    weights, biases = params.layers("pi")
    x = _as_input((0.25, 0.3))
    return {
        "simulate_fixed (9000 steps)": (lambda b: b.simulate_fixed(*sim_args), 20),
        "gae (32 steps)": (lambda b: b.gae(*gae_args), 5000),
        "mlp_forward (2-64-64-1)": (lambda b: b.mlp_forward(x, weights, biases), 5000),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    compiled = kernels.compiled_backend
    python = kernels.python_backend
    if compiled is None:
        print("compiled backend not built; only timing the Python fallback")
    print(f"{'kernel':32s} {'python us':>12s} {'compiled us':>12s} {'speedup':>8s}")
    for name, (fn, number) in cases().items():
        t_py = min(timeit.repeat(lambda: fn(python), number=number, repeat=args.repeat)) / number
        if compiled is None:
            print(f"{name:32s} {t_py * 1e6:12.2f} {'-':>12s} {'-':>8s}")
            continue
        a, b = fn(python), fn(compiled)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if not np.allclose(u, v, rtol=1e-12, atol=1e-12):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
        t_c = min(timeit.repeat(lambda: fn(compiled), number=number, repeat=args.repeat)) / number
        print(f"{name:32s} {t_py * 1e6:12.2f} {t_c * 1e6:12.2f} {t_py / t_c:7.1f}x")

    params = init_params(np.random.default_rng(1))
    rng = np.random.default_rng(2)
    n = 10_000
    t = min(timeit.repeat(lambda: sample_action(params, (0.25, 0.3), rng), number=n, repeat=args.repeat)) / n
    print(f"sample_action end to end ({kernels.BACKEND_NAME}): {t * 1e6:.1f} us per step")
    return 0


if __name__ == "__main__":
    sys.exit(main())
