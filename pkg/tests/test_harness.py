import numpy as np
import pytest

from rlloop.controllers import StaticController, ThresholdController
from rlloop.core import FaultError, KpiSample, SliceConfig
from rlloop.harness import (
    CURVE_COLUMNS,
    SWEEP_COLUMNS,
    TRACE_COLUMNS,
    RunTrace,
    TraceParseError,
    analyze,
    curve_to_csv,
    evaluate,
    read_trace,
    run_episode,
    step_reward,
    sweep_allocation,
    sweep_to_csv,
    train,
    trace_to_csv,
    write_trace,
)
from rlloop.ppo import PpoHyperparams, load_checkpoint
from rlloop.sliceenv import EnvInterface, SliceEnv


def reward_from_columns(alloc_mc, users, cfg):
    # independent of metrics.reward: one slice, written out directly
    a = min(max(alloc_mc / cfg.load_norm_max_mc, 0.0), 1.0)
    d = min(max(users * cfg.per_ue_demand_mc / cfg.load_norm_max_mc, 0.0), 1.0)
    return 1.0 - abs(a - d)


def make_trace(x, q, alloc=1000.0):
    return RunTrace(
        [KpiSample(i, xi, 0.0, qi, alloc, step_reward(alloc, xi, SliceConfig())) for i, (xi, qi) in enumerate(zip(x, q))]
    )


class FlakyEnv(EnvInterface):
    def __init__(self, cfg, fail_at):
        self.inner = SliceEnv(cfg)
        self.fail_at = fail_at
        self.n = 0

    def reset(self, seed):
        return self.inner.reset(seed)

    def apply_cpu_limit(self, mc):
        self.inner.apply_cpu_limit(mc)

    def step(self):
        if self.n == self.fail_at:
            raise FaultError("cgroup write failed")
        self.n += 1
        return self.inner.step()


class TestRunEpisode:
    def test_static_full_episode(self, cfg):
        trace = run_episode(SliceEnv(cfg), StaticController(2945.72, cfg), 900, 0, cfg)
        assert len(trace) == 900 and trace.complete
        assert set(trace.column("allocation_mc")) == {2945.72}
        assert [s.step for s in trace.samples] == list(range(900))

    def test_single_step(self, cfg):
        trace = run_episode(SliceEnv(cfg), StaticController(1000, cfg), 1, 0, cfg)
        assert len(trace) == 1 and trace.samples[0].reward is not None

    def test_rewards_match_columns(self, cfg):
        trace = run_episode(SliceEnv(cfg), ThresholdController(cfg), 900, 2, cfg)
        for s in trace.samples:
            assert abs(s.reward - reward_from_columns(s.allocation_mc, s.active_users, cfg)) <= 1e-12
            assert 0.0 <= s.reward <= 1.0

    def test_zero_steps(self, cfg):
        with pytest.raises(ValueError):
            run_episode(SliceEnv(cfg), StaticController(1000, cfg), 0, 0, cfg)

    def test_fault_gives_partial_trace(self, cfg):
        trace = run_episode(FlakyEnv(cfg, 37), StaticController(1000, cfg), 900, 0, cfg)
        assert len(trace) == 37
        assert not trace.complete and "cgroup" in trace.cause

    def test_evaluate_renumbers(self, cfg):
        trace = evaluate(cfg, StaticController(1500, cfg), seed=4, episodes=3, steps=50)
        assert [s.step for s in trace.samples] == list(range(150))
        first = run_episode(SliceEnv(cfg), StaticController(1500, cfg), 50, 5, cfg)
        assert [s.active_users for s in trace.samples[50:100]] == [s.active_users for s in first.samples]


class TestTraceIO:
    def test_round_trip(self, cfg, tmp_path):
        trace = run_episode(SliceEnv(cfg), ThresholdController(cfg), 200, 9, cfg)
        path = write_trace(trace, tmp_path / "t.csv")
        back = read_trace(path)
        assert back.seed == 9 and back.config_hash == cfg.config_hash() and back.complete
        assert len(back) == 200
        assert trace_to_csv(back) == path.read_text()
        for a, b in zip(trace.samples, back.samples):
            assert a.active_users == b.active_users
            assert abs(a.allocation_mc - b.allocation_mc) <= 5e-7
            assert abs(a.reward - b.reward) <= 5e-7

    def test_schema(self, cfg):
        text = trace_to_csv(run_episode(SliceEnv(cfg), StaticController(800, cfg), 3, 0, cfg))
        lines = text.split("\n")
        assert lines[1] == ",".join(TRACE_COLUMNS)
        assert text.endswith("\n")
        row = lines[2].split(",")
        assert all(len(f.split(".")[1]) == 6 for f in row[2:])

    @pytest.mark.parametrize(
        "body, lineno",
        [
            ("step,active_users\n", 2),
            (",".join(TRACE_COLUMNS) + "\n0,1,2.0,3.0\n", 3),
            (",".join(TRACE_COLUMNS) + "\n0,1,2.0,3.0,500.0,x\n", 3),
            (",".join(TRACE_COLUMNS) + "\n1,1,2,3,500,0.5\n1,1,2,3,500,0.5\n", 4),
            (",".join(TRACE_COLUMNS) + "\n0,-1,2,3,500,0.5\n", 3),
        ],
    )
    def test_malformed_names_line(self, tmp_path, body, lineno):
        path = tmp_path / "bad.csv"
        path.write_text("# seed=1\n" + body)
        with pytest.raises(TraceParseError, match=f"bad.csv:{lineno}:"):
            read_trace(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# nothing\n")
        with pytest.raises(TraceParseError):
            read_trace(path)

    def test_curve_csv(self):
        text = curve_to_csv([0.5, 1.0], [0.5, 0.75])
        assert text == ",".join(CURVE_COLUMNS) + "\n0,0.500000,0.500000\n1,1.000000,0.750000\n"


class TestAnalyze:
    def test_all_violating(self, cfg):
        assert analyze(make_trace([3, 4, 1], [0.2, 0.5, 1.0]), cfg)["beta"] == 1.0

    def test_hand_instance(self, cfg):
        out = analyze(make_trace([2, 3, 5], [0.5, 2.0, 0.9]), cfg)
        assert out["beta"] == pytest.approx(0.7, abs=1e-12)
        assert out["sla_fraction"] == pytest.approx(1 / 3)

    def test_reference_ratio(self, cfg):
        out = analyze(make_trace([5, 5], [20, 20], alloc=1330.76), cfg, 2945.72, 0.10)
        assert out["cpu_ratio"] == pytest.approx(0.4518, abs=5e-4)
        assert out["beta_delta"] == pytest.approx(-0.10)

    def test_reward_closure_in_memory_and_csv(self, cfg, tmp_path):
        trace = run_episode(SliceEnv(cfg), ThresholdController(cfg), 900, 1, cfg)
        assert analyze(trace, cfg)["reward_check_max_err"] <= 1e-12
        # six-decimal CSV rounding bounds the error from a file
        assert analyze(write_trace(trace, tmp_path / "t.csv"), cfg)["reward_check_max_err"] <= 1e-6

    def test_empty(self, cfg):
        with pytest.raises(TraceParseError):
            analyze(RunTrace(), cfg)


class TestSweep:
    def test_single_point(self, cfg):
        rows = sweep_allocation(cfg, [500.0], steps=50, seeds=[0])
        assert len(rows) == 1 and rows[0].allocation_norm == 0.125

    def test_matches_direct_runs(self, cfg):
        rows = sweep_allocation(cfg, [1000.0, 3000.0], steps=100, seeds=[0, 1])
        for row in rows:
            rewards = [
                np.mean(run_episode(SliceEnv(cfg), StaticController(row.allocation_mc, cfg), 100, s, cfg).column("reward"))
                for s in (0, 1)
            ]
            assert row.mean_reward == pytest.approx(np.mean(rewards), abs=1e-12)

    def test_csv(self, cfg):
        text = sweep_to_csv(sweep_allocation(cfg, [500.0, 1000.0], steps=20, seeds=[0]))
        assert text.splitlines()[0] == ",".join(SWEEP_COLUMNS)
        assert len(text.splitlines()) == 3

    def test_empty(self, cfg):
        with pytest.raises(ValueError):
            sweep_allocation(cfg, [], seeds=[0])


class TestTrain:
    def test_zero_learning_rate_keeps_params(self, cfg, tmp_path):
        hp = PpoHyperparams(learning_rate=0.0)
        initial = train(cfg, hp, episodes=1, seed=3, steps=1)  # no rollout completes
        res = train(cfg, hp, episodes=1, seed=3, steps=96, checkpoint_path=tmp_path / "p.ckpt")
        assert len(initial.update_stats) == 0 and len(res.update_stats) == 3
        loaded, _ = load_checkpoint(tmp_path / "p.ckpt")
        for k, v in initial.params.arrays.items():
            assert np.array_equal(v, res.params.arrays[k])
            assert np.array_equal(v, loaded.arrays[k])

    def test_deterministic(self, cfg):
        a = train(cfg, episodes=1, seed=5, steps=128)
        b = train(cfg, episodes=1, seed=5, steps=128)
        assert np.array_equal(a.rewards, b.rewards) and np.array_equal(a.moving_avg, b.moving_avg)
        for k in a.params.arrays:
            assert np.array_equal(a.params.arrays[k], b.params.arrays[k])

    def test_update_cadence_and_trace(self, cfg):
        res = train(cfg, episodes=2, seed=0, steps=100)
        # 3 full rollouts per episode; the 4 leftover transitions are dropped
        assert len(res.update_stats) == 6
        assert len(res.trace) == 200 and res.trace.complete
        assert len(res.moving_avg) == 200
        assert np.all((res.rewards >= 0) & (res.rewards <= 1))

    def test_update_fault_halts(self, cfg, monkeypatch):
        from rlloop import ppo

        calls = {"n": 0}
        real = ppo.update

        def failing(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise FaultError("non-finite parameter pi.w0")
            return real(*args, **kwargs)

        monkeypatch.setattr(ppo, "update", failing)
        res = train(cfg, episodes=1, seed=0, steps=200)
        assert not res.trace.complete and "update fault" in res.trace.cause
        assert len(res.trace) == 64
        assert res.params.is_finite()
