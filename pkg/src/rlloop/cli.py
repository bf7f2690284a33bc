"""Command-line entry point: train, eval, sweep, calibrate, analyze."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from .controllers import (
    CONTROLLER_IDS,
    proportional_controller,
    rl_controller,
    static_controller,
    threshold_controller,
)
from .core import ConfigError, FaultError, SliceConfig, calibrated_config, load_config
from .harness import (
    DEFAULT_SWEEP_GRID,
    EPISODE_STEPS,
    TraceParseError,
    analyze,
    curve_to_csv,
    evaluate,
    format_summary,
    sweep_allocation,
    sweep_to_csv,
    train,
    write_trace,
)
from .metrics import summarize
from .ppo import CheckpointError, load_checkpoint
from .sliceenv import CalibrationError, calibrate

REFERENCE_MC = 2945.72
REFERENCE_BETA = 0.10

seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
steps_option = click.option("--steps", type=click.IntRange(min=1), default=EPISODE_STEPS, show_default=True)
out_option = click.option(
    "--out", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True
)
config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="key=value slice config; defaults to the shipped calibrated config.",
)


def _config(path: Path | None, default=calibrated_config) -> SliceConfig:
    try:
        return load_config(path) if path else default()
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for debug logging.")
def main(verbose: int):
    """Closed-loop CPU allocation for a simulated network slice."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("train")
@config_option
@seed_option
@click.option("--episodes", type=click.IntRange(min=1), default=5, show_default=True)
@steps_option
@out_option
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), help="Default: OUT/policy.ckpt")
@click.option("--realtime", is_flag=True, help="Sleep one control period per step.")
def train_cmd(config_path, seed, episodes, steps, out, checkpoint, realtime):
    """Train a PPO policy online; writes trace, reward curve, summary, checkpoint."""
    cfg = _config(config_path)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = checkpoint or out / "policy.ckpt"
    res = train(cfg, episodes=episodes, seed=seed, steps=steps, checkpoint_path=checkpoint, realtime=realtime)
    write_trace(res.trace, out / "train_trace.csv")
    _write(out, "reward_curve.csv", curve_to_csv(res.rewards, res.moving_avg))
    summary = summarize(res.trace.samples, cfg)
    summary["final_moving_avg"] = float(res.moving_avg[-1])
    summary["updates"] = len(res.update_stats)
    summary["complete"] = str(res.trace.complete).lower()
    _write(out, "train_summary.txt", format_summary(summary))
    click.echo(format_summary(summary), nl=False)
    if not res.trace.complete:
        raise click.ClickException(res.trace.cause)


@main.command("eval")
@config_option
@seed_option
@click.option("--episodes", type=click.IntRange(min=1), default=1, show_default=True)
@steps_option
@click.option("--controller", type=click.Choice(CONTROLLER_IDS), default="ppo", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@out_option
@click.option("--realtime", is_flag=True, help="Sleep one control period per step.")
@click.option("--fixed-mc", type=float, default=REFERENCE_MC, show_default=True, help="static controller")
@click.option("--theta-hi", type=float, default=0.8, show_default=True, help="threshold controller")
@click.option("--theta-lo", type=float, default=0.3, show_default=True, help="threshold controller")
@click.option("--step-mc", type=float, default=500.0, show_default=True, help="threshold controller")
@click.option("--headroom", type=float, default=1.2, show_default=True, help="proportional controller")
@click.option("--stochastic", is_flag=True, help="Sample PPO actions instead of using the mean.")
def eval_cmd(
    config_path, seed, episodes, steps, controller, checkpoint, out, realtime,
    fixed_mc, theta_hi, theta_lo, step_mc, headroom, stochastic,
):  # fmt: skip
    """Run a controller on the slice; writes the trace and a metrics summary."""
    cfg = _config(config_path)
    try:
        if controller == "ppo":
            if checkpoint is None:
                raise click.UsageError("--controller ppo needs --checkpoint")
            params, _ = load_checkpoint(checkpoint)
            ctrl = rl_controller(params, deterministic=not stochastic, seed=seed)
        elif controller == "static":
            ctrl = static_controller(fixed_mc, cfg)
        elif controller == "threshold":
            ctrl = threshold_controller(cfg, theta_hi, theta_lo, step_mc)
        else:
            ctrl = proportional_controller(cfg, headroom)
    except (ConfigError, CheckpointError, FaultError) as exc:
        raise click.ClickException(str(exc)) from None
    trace = evaluate(cfg, ctrl, seed, episodes, steps, realtime)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out / "eval_trace.csv")
    summary = analyze(trace, cfg, REFERENCE_MC, REFERENCE_BETA)
    summary["controller"] = controller
    _write(out, "eval_summary.txt", format_summary(summary))
    click.echo(format_summary(summary), nl=False)


@main.command("sweep")
@config_option
@seed_option
@click.option("--episodes", type=click.IntRange(min=1), default=10, show_default=True, help="Seeds per grid point.")
@steps_option
@out_option
@click.option("--grid", help="Comma-separated millicores; default 500..4000 step 500.")
def sweep_cmd(config_path, seed, episodes, steps, out, grid):
    """Fixed-allocation sweep; writes sweep.csv."""
    cfg = _config(config_path)
    try:
        points = [float(g) for g in grid.split(",")] if grid else list(DEFAULT_SWEEP_GRID)
    except ValueError:
        raise click.BadParameter(f"not a list of numbers: {grid!r}", param_hint="--grid") from None
    for mc in points:
        if not cfg.cpu_min_mc <= mc <= cfg.cpu_max_mc:
            raise click.BadParameter(f"{mc} outside the CPU range", param_hint="--grid")
    rows = sweep_allocation(cfg, points, steps, range(seed, seed + episodes))
    path = _write(out, "sweep.csv", sweep_to_csv(rows))
    best = max(rows, key=lambda r: r.mean_reward)
    click.echo(f"sweep={path}\nbest_allocation_mc={best.allocation_mc:.6f}\nbest_mean_reward={best.mean_reward:.6f}")


@main.command("calibrate")
@config_option
@seed_option
@click.option("--episodes", type=click.IntRange(min=1), default=10, show_default=True, help="Seeds to average.")
@steps_option
@out_option
@click.option("--reference-mc", type=float, default=REFERENCE_MC, show_default=True)
@click.option("--target-beta", type=float, default=REFERENCE_BETA, show_default=True)
def calibrate_cmd(config_path, seed, episodes, steps, out, reference_mc, target_beta):
    """Fit traffic spread, session length and degradation exponent; writes calibrated.cfg."""
    base = _config(config_path, default=SliceConfig)
    try:
        res = calibrate(base, reference_mc, target_beta, seeds=range(seed, seed + episodes), steps=steps)
    except (CalibrationError, ConfigError) as exc:
        raise click.ClickException(str(exc)) from None
    header = (
        f"# calibrate: beta({reference_mc:g} mc)={res.achieved_beta:.6f} "
        f"target={target_beta:g} seeds={seed}..{seed + episodes - 1} steps={steps}\n"
    )
    path = _write(out, "calibrated.cfg", header + res.config.to_text())
    click.echo(
        f"config={path}\nachieved_beta={res.achieved_beta:.6f}\n"
        f"traffic_std={res.config.traffic_std}\nsession_len_s={res.config.session_len_s}\n"
        f"degradation_exponent={res.config.degradation_exponent}"
    )


@main.command("analyze")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@config_option
@out_option
@click.option("--reference-mc", type=float, default=REFERENCE_MC, show_default=True)
@click.option("--reference-beta", type=float, default=REFERENCE_BETA, show_default=True)
def analyze_cmd(trace_path, config_path, out, reference_mc, reference_beta):
    """Metrics summary of a trace CSV against a reference operating point."""
    cfg = _config(config_path)
    try:
        summary = analyze(trace_path, cfg, reference_mc, reference_beta)
    except TraceParseError as exc:
        raise click.ClickException(str(exc)) from None
    _write(out, "analysis.txt", format_summary(summary))
    click.echo(format_summary(summary), nl=False)


if __name__ == "__main__":
    main()
