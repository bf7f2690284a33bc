"""Reward, load estimate and QoS metrics over KPI traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import ContractViolation, KpiSample, SliceConfig, clamp

#: Convention recorded alongside every beta value: no traffic means no degradation.
ZERO_TRAFFIC_BETA = 0.0


def reward(a: Sequence[float], d: Sequence[float]) -> float:
    """Tracking reward ``1 - mean(|a_i - d_i|)`` across slices."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if a.size == 0 or a.size != d.size:
        raise ContractViolation(f"reward needs equal non-empty inputs, got {a.size} and {d.size}")
    if np.any((a < 0) | (a > 1) | (d < 0) | (d > 1)):
        raise ContractViolation("reward inputs must lie in [0, 1]")
    return float(1.0 - np.abs(a - d).sum() / a.size)


def load_estimate(active_users: float, cfg: SliceConfig) -> float:
    """Normalized CPU demand of the current user population."""
    if active_users < 0:
        raise ContractViolation("active_users must be >= 0")
    return clamp(active_users * cfg.per_ue_demand_mc / cfg.load_norm_max_mc, 0.0, 1.0)


@dataclass(frozen=True)
class QosTrace:
    x: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if x.size == 0 or x.size != q.size:
            raise ContractViolation("QosTrace needs equal-length, non-empty x and q")
        if np.any(x < 0) or np.any(q < 0):
            raise ContractViolation("QosTrace values must be non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_samples(cls, samples: Iterable[KpiSample]) -> QosTrace:
        samples = list(samples)
        return cls(
            np.array([s.active_users for s in samples], dtype=np.float64),
            np.array([s.throughput_mbps for s in samples], dtype=np.float64),
        )

    def __len__(self):
        return self.x.size


def qos_degradation(trace: QosTrace, q_thresh: float) -> float:
    """Traffic-weighted share of steps with throughput at or below ``q_thresh``.

    Returns ``ZERO_TRAFFIC_BETA`` when the trace carries no traffic at all.
    """
    total = trace.x.sum()
    if total == 0:
        return ZERO_TRAFFIC_BETA
    return float(trace.x[trace.q <= q_thresh].sum() / total)


def sla_fraction(trace: QosTrace, q_thresh: float) -> float:
    return float(np.count_nonzero(trace.q > q_thresh) / len(trace))


def mean_allocation(samples: Sequence[KpiSample]) -> float:
    if len(samples) == 0:
        raise ContractViolation("mean_allocation of an empty trace")
    return float(np.mean([s.allocation_mc for s in samples]))


def mean_reward(samples: Sequence[KpiSample]) -> float:
    rewards = [s.reward for s in samples if s.reward is not None]
    if not rewards:
        raise ContractViolation("trace has no rewards")
    return float(np.mean(rewards))


def summarize(samples: Sequence[KpiSample], cfg: SliceConfig) -> dict[str, float]:
    trace = QosTrace.from_samples(samples)
    return {
        "mean_allocation_mc": mean_allocation(samples),
        "beta": qos_degradation(trace, cfg.qos_threshold_mbps),
        "sla_fraction": sla_fraction(trace, cfg.qos_threshold_mbps),
        "mean_reward": mean_reward(samples),
    }


def moving_average(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing mean over up to ``window`` values (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)
