"""Discrete-time slice simulator standing in for the 5G testbed.

Each control period the slice receives a batch of user arrivals, serves the
active users under the CPU limit currently applied, and reports CPU usage and
per-UE throughput. Under-allocation degrades throughput as ``phi**p`` where
``phi`` is the served fraction of CPU demand.

Randomness comes from two independent streams derived from the seed: one for
arrivals (one uniform per step, inverse-CDF truncated normal) and one for the
CPU-usage measurement noise. Drawing a fixed number of uniforms per step keeps
the step-by-step environment and the vectorized :func:`simulate_static` path
on the same random sequence.
"""

from __future__ import annotations

import abc
import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .core import (
    ConfigError,
    ContractViolation,
    KpiSample,
    Observation,
    SliceConfig,
    normalize_observation,
)
from .metrics import QosTrace, qos_degradation

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    def __init__(self, message: str, best_beta: float | None = None):
        super().__init__(message)
        self.best_beta = best_beta


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    arrivals_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(arrivals_seq), np.random.default_rng(noise_seq)


def arrivals_from_uniform(u, cfg: SliceConfig):
    """Map uniforms in [0, 1) to rounded truncated-normal arrival counts."""
    u = np.asarray(u, dtype=np.float64)
    if cfg.traffic_std == 0:
        z = np.full_like(u, cfg.traffic_mean)
    else:
        lower = ndtr(-cfg.traffic_mean / cfg.traffic_std)
        p = lower + u * (1.0 - lower)
        z = cfg.traffic_mean + cfg.traffic_std * ndtri(np.minimum(p, np.nextafter(1.0, 0.0)))
    return np.floor(np.maximum(z, 0.0) + 0.5).astype(np.int64)


def generate_arrivals(rng: np.random.Generator, cfg: SliceConfig) -> int:
    """Non-negative integer arrivals for one control period."""
    return int(arrivals_from_uniform(rng.random(), cfg))


def truncated_normal_mean(mean: float, std: float) -> float:
    """Mean of Normal(mean, std) truncated to [0, inf)."""
    if std == 0:
        return max(mean, 0.0)
    alpha = -mean / std
    pdf = math.exp(-0.5 * alpha * alpha) / math.sqrt(2 * math.pi)
    return mean + std * pdf / (1.0 - ndtr(alpha))


def serve(active_users: int, allocation_mc: float, noise: float, cfg: SliceConfig):
    """CPU usage and per-UE throughput for one step.

    Same arithmetic, in the same order, as ``kernels.simulate_fixed``.
    """
    demand = active_users * cfg.per_ue_demand_mc
    served = allocation_mc if allocation_mc < demand else demand
    usage = served * (1.0 + noise)
    if usage < 0.0:
        usage = 0.0
    if active_users > 0:
        phi = allocation_mc / demand
        if phi > 1.0:
            phi = 1.0
        throughput = cfg.per_ue_target_rate_mbps * math.pow(phi, cfg.degradation_exponent)
    else:
        throughput = cfg.per_ue_target_rate_mbps
    return usage, throughput


class EnvInterface(abc.ABC):
    """What a controller loop needs from a slice, simulated or live."""

    @abc.abstractmethod
    def reset(self, seed: int) -> Observation: ...

    @abc.abstractmethod
    def apply_cpu_limit(self, mc: float) -> None: ...

    @abc.abstractmethod
    def step(self) -> tuple[Observation, KpiSample]: ...


@dataclass
class EnvState:
    step: int = 0
    active_users: int = 0
    demand_mc: float = 0.0
    allocation_mc: float = 0.0
    cpu_usage_mc: float = 0.0
    throughput_mbps: float = 0.0
    arrivals_rng: np.random.Generator | None = field(default=None, repr=False)
    noise_rng: np.random.Generator | None = field(default=None, repr=False)
    window: deque = field(default_factory=deque, repr=False)


class SliceEnv(EnvInterface):
    """Simulated slice. The observation returned by ``reset``/``step`` holds the
    users that will be served in the coming step and the CPU usage measured in
    the step just finished."""

    def __init__(self, cfg: SliceConfig | None = None):
        self.cfg = cfg or SliceConfig()
        self.state = EnvState()

    def reset(self, seed: int) -> Observation:
        arrivals_rng, noise_rng = _streams(seed)
        self.state = EnvState(
            allocation_mc=self.cfg.cpu_min_mc,
            arrivals_rng=arrivals_rng,
            noise_rng=noise_rng,
            window=deque(maxlen=self.cfg.session_len_s),
        )
        self._admit()
        return self.observation()

    def _admit(self):
        st = self.state
        st.window.append(generate_arrivals(st.arrivals_rng, self.cfg))
        st.active_users = sum(st.window)
        st.demand_mc = st.active_users * self.cfg.per_ue_demand_mc

    def observation(self) -> Observation:
        return normalize_observation(self.state.active_users, self.state.cpu_usage_mc, self.cfg)

    def apply_cpu_limit(self, mc: float) -> None:
        if not self.cfg.cpu_min_mc <= mc <= self.cfg.cpu_max_mc:
            raise ContractViolation(
                f"CPU limit {mc} outside [{self.cfg.cpu_min_mc}, {self.cfg.cpu_max_mc}]"
            )
        self.state.allocation_mc = float(mc)

    def step(self) -> tuple[Observation, KpiSample]:
        if self.state.arrivals_rng is None:
            raise ContractViolation("step() before reset()")
        sample = env_step(self.state, self.cfg)
        self._admit()
        return self.observation(), sample


def env_step(state: EnvState, cfg: SliceConfig) -> KpiSample:
    """Serve ``state.active_users`` under ``state.allocation_mc``; updates state in place."""
    r = cfg.usage_noise_rel
    noise = state.noise_rng.uniform(-r, r)
    usage, throughput = serve(state.active_users, state.allocation_mc, noise, cfg)
    state.cpu_usage_mc = usage
    state.throughput_mbps = throughput
    sample = KpiSample(
        step=state.step,
        active_users=state.active_users,
        cpu_usage_mc=usage,
        throughput_mbps=throughput,
        allocation_mc=state.allocation_mc,
    )
    state.step += 1
    return sample


def simulate_static(cfg: SliceConfig, allocation_mc: float, steps: int, seed: int):
    """Vectorized run at a constant CPU limit.

    Produces the same ``(users, usage, throughput)`` columns as driving
    :class:`SliceEnv` with that limit for ``steps`` steps from ``reset(seed)``.
    """
    arrivals_rng, noise_rng = _streams(seed)
    arrivals = arrivals_from_uniform(arrivals_rng.random(steps), cfg)
    r = cfg.usage_noise_rel
    noise = noise_rng.uniform(-r, r, steps)
    return kernels.simulate_fixed(
        np.ascontiguousarray(arrivals, dtype=np.int64),
        np.ascontiguousarray(noise),
        float(allocation_mc),
        float(cfg.per_ue_demand_mc),
        float(cfg.per_ue_target_rate_mbps),
        float(cfg.degradation_exponent),
        int(cfg.session_len_s),
    )


def static_beta(cfg: SliceConfig, allocation_mc: float, steps: int, seeds) -> float:
    """Mean per-seed beta at a constant allocation."""
    betas = []
    for seed in seeds:
        users, _, thr = simulate_static(cfg, allocation_mc, steps, seed)
        betas.append(qos_degradation(QosTrace(users, thr), cfg.qos_threshold_mbps))
    return float(np.mean(betas))


# Search ranges for calibrate(); documented in the README.
CALIBRATION_GRID = {
    "traffic_std": (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0),
    "session_len_s": (1, 2, 3),
    "degradation_exponent": (1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0),
}


@dataclass(frozen=True)
class CalibrationResult:
    config: SliceConfig
    achieved_beta: float
    reference_alloc_mc: float
    target_beta: float


def calibrate(
    cfg: SliceConfig,
    reference_alloc_mc: float,
    target_beta: float,
    *,
    seeds=range(10),
    steps: int = 900,
    tolerance: float = 0.03,
    grid: dict | None = None,
) -> CalibrationResult:
    """Grid-search traffic spread, session length and degradation exponent so a
    constant ``reference_alloc_mc`` yields ``target_beta``.

    Among grid points within ``tolerance`` the shortest session wins, then the
    smallest ``traffic_std``: longer sessions multiply the steady-state user
    count and a wider spread lifts the truncated mean, both moving the load
    away from ``traffic_mean``. Then the smallest ``|beta - target_beta|``;
    remaining ties keep grid order.
    Raises :class:`CalibrationError` if no point lands within ``tolerance``.
    """
    if not 0 < target_beta < 1:
        raise ConfigError("target_beta must lie in (0, 1)")
    if not cfg.cpu_min_mc <= reference_alloc_mc <= cfg.cpu_max_mc:
        raise ConfigError("reference allocation outside the CPU range")
    seeds = list(seeds)
    if len(seeds) < 1:
        raise ConfigError("calibration needs at least one seed")
    grid = grid or CALIBRATION_GRID
    names = list(grid)
    best = closest = None
    for values in itertools.product(*(grid[n] for n in names)):
        candidate = cfg.replace(**dict(zip(names, values)))
        beta = static_beta(candidate, reference_alloc_mc, steps, seeds)
        gap = abs(beta - target_beta)
        if closest is None or gap < closest[0]:
            closest = (gap, beta)
        if gap <= tolerance:
            key = (candidate.session_len_s, candidate.traffic_std, gap)
            if best is None or key < best[0]:
                best = (key, beta, candidate)
    if best is None:
        raise CalibrationError(
            f"no grid point within {tolerance} of beta={target_beta}; best achieved {closest[1]:.4f}",
            best_beta=closest[1],
        )
    _, beta, candidate = best
    log.info("calibrated beta=%.4f with %s", beta, {n: getattr(candidate, n) for n in names})
    return CalibrationResult(candidate, beta, reference_alloc_mc, target_beta)
