"""Allocation controllers driven by the harness: static, threshold, proportional, PPO."""

from __future__ import annotations

import abc

import numpy as np

from .core import ConfigError, Observation, SliceConfig, action_for_allocation, clamp, map_action
from .ppo import PolicyParameters, policy_forward, sample_action


class Controller(abc.ABC):
    name = "controller"

    def reset(self, rng: np.random.Generator | None = None) -> None:
        """Called at the start of every episode."""

    @abc.abstractmethod
    def act(self, obs: Observation, last_usage_mc: float, last_alloc_mc: float) -> float:
        """Normalized action in [0, 1] for the coming control period."""


class StaticController(Controller):
    name = "static"

    def __init__(self, fixed_mc: float, cfg: SliceConfig):
        if not cfg.cpu_min_mc <= fixed_mc <= cfg.cpu_max_mc:
            raise ConfigError(f"static allocation {fixed_mc} outside [{cfg.cpu_min_mc}, {cfg.cpu_max_mc}]")
        self.fixed_mc = fixed_mc
        self.action = action_for_allocation(fixed_mc, cfg)

    def act(self, obs, last_usage_mc, last_alloc_mc):
        return self.action


class ThresholdController(Controller):
    """Step the allocation up or down when utilization leaves [theta_lo, theta_hi]."""

    name = "threshold"

    def __init__(self, cfg: SliceConfig, theta_hi=0.8, theta_lo=0.3, step_mc=500.0):
        if not 0 < theta_lo < theta_hi < 1:
            raise ConfigError("threshold controller needs 0 < theta_lo < theta_hi < 1")
        if step_mc <= 0:
            raise ConfigError("step_mc must be positive")
        self.cfg = cfg
        self.theta_hi, self.theta_lo, self.step_mc = theta_hi, theta_lo, step_mc

    def next_allocation(self, last_usage_mc: float, last_alloc_mc: float) -> float:
        u = last_usage_mc / last_alloc_mc
        alloc = last_alloc_mc
        if u > self.theta_hi:
            alloc += self.step_mc
        elif u < self.theta_lo:
            alloc -= self.step_mc
        return clamp(alloc, self.cfg.cpu_min_mc, self.cfg.cpu_max_mc)

    def act(self, obs, last_usage_mc, last_alloc_mc):
        return action_for_allocation(self.next_allocation(last_usage_mc, last_alloc_mc), self.cfg)


class ProportionalController(Controller):
    """Allocate ``headroom`` times the demand implied by the observed user count."""

    name = "proportional"

    def __init__(self, cfg: SliceConfig, headroom=1.2):
        if headroom < 1:
            raise ConfigError("headroom must be >= 1")
        self.cfg = cfg
        self.headroom = headroom

    def next_allocation(self, obs: Observation) -> float:
        demand = obs.traffic_norm * self.cfg.traffic_norm_max * self.cfg.per_ue_demand_mc
        return clamp(self.headroom * demand, self.cfg.cpu_min_mc, self.cfg.cpu_max_mc)

    def act(self, obs, last_usage_mc, last_alloc_mc):
        return action_for_allocation(self.next_allocation(obs), self.cfg)


class RLController(Controller):
    """Trained policy; ``deterministic`` uses the clamped mean instead of sampling."""

    name = "ppo"

    def __init__(self, params: PolicyParameters, deterministic: bool = True, seed: int = 0):
        params.check_finite()
        self.params = params
        self.deterministic = deterministic
        self.rng = np.random.default_rng(seed)

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng

    def act(self, obs, last_usage_mc, last_alloc_mc):
        if self.deterministic:
            mean, _, _ = policy_forward(self.params, obs)
            return clamp(mean, 0.0, 1.0)
        action, _, _ = sample_action(self.params, obs, self.rng)
        return action


def static_controller(fixed_mc, cfg):
    return StaticController(fixed_mc, cfg)


def threshold_controller(cfg, theta_hi=0.8, theta_lo=0.3, step_mc=500.0):
    return ThresholdController(cfg, theta_hi, theta_lo, step_mc)


def proportional_controller(cfg, headroom=1.2):
    return ProportionalController(cfg, headroom)


def rl_controller(params, deterministic=True, seed=0):
    return RLController(params, deterministic, seed)


CONTROLLER_IDS = ("ppo", "static", "threshold", "proportional")


def allocation_of(controller: Controller, obs, last_usage_mc, last_alloc_mc, cfg) -> float:
    return map_action(controller.act(obs, last_usage_mc, last_alloc_mc), cfg)
