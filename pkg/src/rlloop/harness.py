"""Episode runner, PPO training loop, allocation sweep and trace I/O."""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .controllers import Controller, StaticController
from .core import (
    ContractViolation,
    FaultError,
    KpiSample,
    SliceConfig,
    clamp,
    map_action,
    normalize_observation,
)
from .metrics import ZERO_TRAFFIC_BETA, load_estimate, moving_average, reward, summarize
from .ppo import (
    PolicyParameters,
    PpoAgent,
    PpoHyperparams,
    Transition,
    gaussian_log_prob,
    init_params,
    policy_forward,
    save_checkpoint,
)
from .sliceenv import EnvInterface, SliceEnv

log = logging.getLogger(__name__)

EPISODE_STEPS = 900
TRACE_COLUMNS = ("step", "active_users", "cpu_usage_mc", "throughput_mbps", "allocation_mc", "reward")
SWEEP_COLUMNS = ("allocation_mc", "mean_reward", "beta", "sla_fraction", "allocation_norm")
CURVE_COLUMNS = ("step", "reward", "moving_avg")
DEFAULT_SWEEP_GRID = tuple(float(mc) for mc in range(500, 4001, 500))
# Starts exploration at sigma~0.2 rather than ~0.6 so it can shrink to tracking
# precision within a few episodes at lr 3e-4.
DEFAULT_LOG_STD_INIT = -1.6


class TraceParseError(ValueError):
    pass


@dataclass
class RunTrace:
    samples: list[KpiSample] = field(default_factory=list)
    seed: int | None = None
    config_hash: str = ""
    controller: str = ""
    episodes: int = 1
    complete: bool = True
    cause: str = ""

    def __len__(self):
        return len(self.samples)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=np.float64)


def step_reward(allocation_mc: float, active_users: int, cfg: SliceConfig) -> float:
    """Reward of one step, computed from the CPU limit actually applied."""
    a = clamp(allocation_mc / cfg.load_norm_max_mc, 0.0, 1.0)
    return reward([a], [load_estimate(active_users, cfg)])


def run_episode(
    env: EnvInterface,
    controller: Controller,
    steps: int,
    seed: int,
    cfg: SliceConfig,
    realtime: bool = False,
) -> RunTrace:
    """Observe, act, apply the limit, step, score; one row per control period."""
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    trace = RunTrace(seed=seed, config_hash=cfg.config_hash(), controller=controller.name)
    obs = env.reset(seed)
    controller.reset(np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2]))
    last_usage, last_alloc = 0.0, cfg.cpu_min_mc
    for _ in range(steps):
        mc = map_action(controller.act(obs, last_usage, last_alloc), cfg)
        try:
            env.apply_cpu_limit(mc)
            obs, sample = env.step()
        except (FaultError, ContractViolation, OSError) as exc:
            trace.complete = False
            trace.cause = f"environment fault: {exc}"
            log.error("episode aborted after %d steps: %s", len(trace), exc)
            break
        sample.reward = step_reward(sample.allocation_mc, sample.active_users, cfg)
        trace.samples.append(sample)
        last_usage, last_alloc = sample.cpu_usage_mc, sample.allocation_mc
        if realtime:
            time.sleep(cfg.control_period_s)
    return trace


def evaluate(
    cfg: SliceConfig,
    controller: Controller,
    seed: int,
    episodes: int = 1,
    steps: int = EPISODE_STEPS,
    realtime: bool = False,
) -> RunTrace:
    """Back-to-back episodes with seeds ``seed, seed+1, ...``; steps renumbered globally."""
    merged = RunTrace(seed=seed, config_hash=cfg.config_hash(), controller=controller.name, episodes=episodes)
    for ep in range(episodes):
        trace = run_episode(SliceEnv(cfg), controller, steps, seed + ep, cfg, realtime)
        for s in trace.samples:
            s.step = len(merged.samples)
            merged.samples.append(s)
        if not trace.complete:
            merged.complete, merged.cause = False, trace.cause
            break
    return merged


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: PolicyParameters
    trace: RunTrace
    rewards: np.ndarray
    moving_avg: np.ndarray
    update_stats: list[dict]


def train(
    cfg: SliceConfig,
    hp: PpoHyperparams | None = None,
    episodes: int = 5,
    seed: int = 0,
    *,
    steps: int = EPISODE_STEPS,
    hidden: tuple[int, ...] = (64, 64),
    log_std_init: float = DEFAULT_LOG_STD_INIT,
    env: EnvInterface | None = None,
    init: PolicyParameters | None = None,
    checkpoint_path: str | Path | None = None,
    window: int = 100,
    realtime: bool = False,
    pretrain_traces: Sequence[RunTrace] = (),
) -> TrainResult:
    """Online PPO: the environment is reset once, then each episode collects
    ``steps`` transitions with an update every ``hp.rollout_len`` of them.

    The buffer is cleared at each episode start, so trailing transitions that
    do not fill a rollout are dropped. Values are bootstrapped at every rollout
    boundary since the slice never terminates.
    """
    hp = hp or PpoHyperparams()
    if episodes < 1:
        raise ContractViolation("episodes must be >= 1")
    init_seq, agent_seq, env_seq = np.random.SeedSequence(seed).spawn(3)
    params = init or init_params(
        np.random.default_rng(init_seq), hidden, log_std_init=log_std_init, value_scale=1.0 / (1.0 - hp.gamma)
    )
    agent = PpoAgent(params, hp, np.random.default_rng(agent_seq))
    env = env or SliceEnv(cfg)
    trace = RunTrace(seed=seed, config_hash=cfg.config_hash(), controller="ppo-train", episodes=episodes)
    stats: list[dict] = []

    for replay in pretrain_traces:
        stats.extend(pretrain_from_trace(agent, replay, cfg))

    obs = env.reset(int(env_seq.generate_state(1)[0]))
    halted = False
    for _ in range(episodes):
        agent.buffer.clear()
        for _ in range(steps):
            action, raw, logp, value = agent.act(obs)
            mc = map_action(action, cfg)
            env.apply_cpu_limit(mc)
            next_obs, sample = env.step()
            sample.reward = step_reward(sample.allocation_mc, sample.active_users, cfg)
            trace.samples.append(sample)
            agent.buffer.add(Transition(obs, action, raw, logp, value, sample.reward, next_obs))
            obs = next_obs
            if len(agent.buffer) == hp.rollout_len:
                try:
                    stats.append(agent.update(agent.value(next_obs)))
                except FaultError as exc:
                    trace.complete, trace.cause = False, f"update fault: {exc}"
                    log.error("training halted: %s", exc)
                    halted = True
                    break
                agent.buffer.clear()
            if realtime:
                time.sleep(cfg.control_period_s)
        if halted:
            break

    rewards = trace.column("reward")
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, agent.params, hp)
    return TrainResult(agent.params, trace, rewards, moving_average(rewards, window), stats)


def pretrain_from_trace(agent: PpoAgent, trace: RunTrace, cfg: SliceConfig) -> list[dict]:
    """Experimental: replay a logged trace through PPO updates before going online.

    Logged allocations are treated as unclamped actions sampled from the
    current policy, which makes the first epoch on-policy only in form.
    """
    stats = []
    prev_usage = 0.0
    rows = trace.samples
    agent.buffer.clear()
    for i, s in enumerate(rows):
        obs = normalize_observation(s.active_users, prev_usage, cfg)
        nxt_usage = s.cpu_usage_mc
        next_users = rows[i + 1].active_users if i + 1 < len(rows) else s.active_users
        next_obs = normalize_observation(next_users, nxt_usage, cfg)
        action = clamp(s.allocation_mc / cfg.load_norm_max_mc, 0.0, 1.0)
        mean, log_std, value = policy_forward(agent.params, obs)
        r = s.reward if s.reward is not None else step_reward(s.allocation_mc, s.active_users, cfg)
        agent.buffer.add(
            Transition(obs, action, action, float(gaussian_log_prob(action, mean, log_std)), value, r, next_obs)
        )
        prev_usage = nxt_usage
        if len(agent.buffer) == agent.hp.rollout_len:
            stats.append(agent.update(agent.value(next_obs)))
            agent.buffer.clear()
    agent.buffer.clear()
    return stats


# -------------------------------------------------------------------- sweep


@dataclass
class SweepRow:
    allocation_mc: float
    mean_reward: float
    beta: float
    sla_fraction: float
    allocation_norm: float


def sweep_allocation(
    env_factory: Callable[[], SliceEnv] | SliceConfig,
    grid: Sequence[float] = DEFAULT_SWEEP_GRID,
    steps: int = EPISODE_STEPS,
    seeds: Sequence[int] = range(10),
) -> list[SweepRow]:
    """Run a static controller at every grid point and average metrics over seeds."""
    if isinstance(env_factory, SliceConfig):
        cfg = env_factory
        env_factory = lambda: SliceEnv(cfg)  # noqa: E731
    grid, seeds = list(grid), list(seeds)
    if not grid or not seeds:
        raise ContractViolation("sweep needs a non-empty grid and at least one seed")
    rows = []
    for mc in grid:
        per_seed = []
        for seed in seeds:
            env = env_factory()
            trace = run_episode(env, StaticController(mc, env.cfg), steps, seed, env.cfg)
            per_seed.append(summarize(trace.samples, env.cfg))
        rows.append(
            SweepRow(
                allocation_mc=float(mc),
                mean_reward=float(np.mean([m["mean_reward"] for m in per_seed])),
                beta=float(np.mean([m["beta"] for m in per_seed])),
                sla_fraction=float(np.mean([m["sla_fraction"] for m in per_seed])),
                allocation_norm=float(mc) / env.cfg.load_norm_max_mc,
            )
        )
    return rows


# ---------------------------------------------------------------------- I/O


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6f}"


def trace_to_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    buf.write(
        f"# seed={trace.seed} config_hash={trace.config_hash} controller={trace.controller} "
        f"episodes={trace.episodes} complete={str(trace.complete).lower()}"
        + (f" cause={trace.cause!r}" if trace.cause else "")
        + "\n"
    )
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for s in trace.samples:
        buf.write(",".join(_fmt(getattr(s, c)) for c in TRACE_COLUMNS) + "\n")
    return buf.getvalue()


def write_trace(trace: RunTrace, path) -> Path:
    path = Path(path)
    path.write_text(trace_to_csv(trace))
    return path


def read_trace(path) -> RunTrace:
    """Parse a trace CSV; errors name the offending line."""
    path = Path(path)
    trace = RunTrace()
    header_seen = False
    try:
        text = path.read_text()
    except OSError as exc:
        raise TraceParseError(f"{path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                if key == "seed" and value not in ("", "None"):
                    trace.seed = int(value)
                elif key == "config_hash":
                    trace.config_hash = value
                elif key == "controller":
                    trace.controller = value
                elif key == "episodes":
                    trace.episodes = int(value)
                elif key == "complete":
                    trace.complete = value == "true"
            continue
        fields_ = line.split(",")
        if not header_seen:
            if tuple(f.strip() for f in fields_) != TRACE_COLUMNS:
                raise TraceParseError(f"{path}:{lineno}: expected header {','.join(TRACE_COLUMNS)}")
            header_seen = True
            continue
        if len(fields_) != len(TRACE_COLUMNS):
            raise TraceParseError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields, got {len(fields_)}")
        try:
            sample = KpiSample(
                step=int(fields_[0]),
                active_users=int(fields_[1]),
                cpu_usage_mc=float(fields_[2]),
                throughput_mbps=float(fields_[3]),
                allocation_mc=float(fields_[4]),
                reward=float(fields_[5]) if fields_[5].strip() else None,
            )
        except ValueError as exc:
            raise TraceParseError(f"{path}:{lineno}: {exc}") from None
        if trace.samples and sample.step <= trace.samples[-1].step:
            raise TraceParseError(f"{path}:{lineno}: steps not strictly increasing")
        if sample.active_users < 0 or sample.cpu_usage_mc < 0 or sample.throughput_mbps < 0:
            raise TraceParseError(f"{path}:{lineno}: negative KPI value")
        trace.samples.append(sample)
    if not header_seen:
        raise TraceParseError(f"{path}: missing header line")
    return trace


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [",".join(_fmt(getattr(r, c)) for c in SWEEP_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def curve_to_csv(rewards, moving_avg, steps=None) -> str:
    steps = range(len(rewards)) if steps is None else steps
    lines = [",".join(CURVE_COLUMNS)]
    lines += [f"{int(s)},{_fmt(r)},{_fmt(m)}" for s, r, m in zip(steps, rewards, moving_avg)]
    return "\n".join(lines) + "\n"


def format_summary(summary: dict) -> str:
    return "".join(f"{k}={_fmt(v) if isinstance(v, float) else v}\n" for k, v in summary.items())


def analyze(
    trace: RunTrace | str | Path,
    cfg: SliceConfig,
    reference_mc: float | None = None,
    reference_beta: float | None = None,
) -> dict:
    """Metrics summary of a trace, optionally against a reference operating point.

    ``reward_check_max_err`` is the largest gap between the logged rewards and
    rewards recomputed from the allocation and user columns.
    """
    if not isinstance(trace, RunTrace):
        trace = read_trace(trace)
    if not trace.samples:
        raise TraceParseError("trace has no rows")
    summary: dict = summarize(trace.samples, cfg)
    recomputed = [step_reward(s.allocation_mc, s.active_users, cfg) for s in trace.samples if s.reward is not None]
    logged = [s.reward for s in trace.samples if s.reward is not None]
    summary["reward_check_max_err"] = float(np.max(np.abs(np.subtract(recomputed, logged))))
    summary["steps"] = len(trace.samples)
    summary["beta_zero_traffic_convention"] = ZERO_TRAFFIC_BETA
    if reference_mc is not None:
        summary["reference_mc"] = float(reference_mc)
        summary["cpu_ratio"] = summary["mean_allocation_mc"] / reference_mc
    if reference_beta is not None:
        summary["reference_beta"] = float(reference_beta)
        summary["beta_delta"] = summary["beta"] - reference_beta
    return summary
