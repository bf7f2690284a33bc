"""Closed-loop PPO CPU-allocation control for a simulated 5G network slice."""

from .core import (
    ConfigError,
    ContractViolation,
    FaultError,
    KpiSample,
    Observation,
    SliceConfig,
    calibrated_config,
    load_config,
    map_action,
    normalize_observation,
)
from .kernels import BACKEND_NAME

__version__ = "0.1.0"
