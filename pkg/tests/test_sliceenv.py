import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlloop.core import ContractViolation, SliceConfig
from rlloop.sliceenv import (
    CalibrationError,
    EnvState,
    SliceEnv,
    arrivals_from_uniform,
    calibrate,
    env_step,
    generate_arrivals,
    serve,
    simulate_static,
    static_beta,
    truncated_normal_mean,
)


def truncnorm_mean_oracle(mu, sigma):
    # closed form written out with math.erf, independent of scipy
    alpha = -mu / sigma
    pdf = math.exp(-alpha * alpha / 2) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + math.erf(alpha / math.sqrt(2)))
    return mu + sigma * pdf / (1 - cdf)


class TestArrivals:
    def test_degenerate(self, rng):
        cfg = SliceConfig(traffic_std=0.0)
        assert {generate_arrivals(rng, cfg) for _ in range(200)} == {5}

    def test_nonnegative_integers(self, rng):
        cfg = SliceConfig(traffic_mean=1.0, traffic_std=6.0)
        draws = arrivals_from_uniform(rng.random(10_000), cfg)
        assert draws.dtype == np.int64
        assert draws.min() >= 0

    def test_empirical_mean(self):
        cfg = SliceConfig(traffic_mean=5.0, traffic_std=3.0)
        draws = arrivals_from_uniform(np.random.default_rng(7).random(100_000), cfg)
        expected = truncnorm_mean_oracle(5.0, 3.0)
        assert abs(draws.mean() - expected) / expected < 0.02

    def test_closed_form_matches_oracle(self):
        for mu, sigma in [(5, 3), (1, 2), (3, 0.5), (5, 6)]:
            assert truncated_normal_mean(mu, sigma) == pytest.approx(truncnorm_mean_oracle(mu, sigma), rel=1e-12)

    def test_uniform_extremes_are_finite(self, cfg):
        out = arrivals_from_uniform(np.array([0.0, 1.0 - 1e-17, np.nextafter(1.0, 0.0)]), cfg)
        assert out[0] == 0
        assert np.all(out >= 0) and np.all(out < 100)


class TestServe:
    def test_idle(self, cfg):
        usage, thr = serve(0, 500.0, 0.0, cfg)
        assert usage == 0.0 and thr == 20.0

    def test_fully_served(self, cfg):
        usage, thr = serve(5, 2000.0, 0.0, cfg)
        assert usage == 1400.0 and thr == 20.0

    def test_underprovisioned(self):
        cfg = SliceConfig(degradation_exponent=3.0)
        usage, thr = serve(10, 700.0, 0.0, cfg)
        assert usage == 700.0
        assert thr == pytest.approx(0.3125, abs=1e-12)

    @given(
        users=st.integers(0, 40),
        alloc=st.floats(500, 4000),
        noise=st.floats(-0.02, 0.02),
        p=st.sampled_from([1.0, 3.0, 12.0]),
    )
    def test_invariants(self, users, alloc, noise, p):
        cfg = SliceConfig(degradation_exponent=p)
        usage, thr = serve(users, alloc, noise, cfg)
        assert 0 <= usage <= alloc * (1 + cfg.usage_noise_rel) + 1e-9
        assert 0 <= thr <= cfg.per_ue_target_rate_mbps

    @given(users=st.integers(1, 40), a=st.floats(500, 4000), b=st.floats(500, 4000))
    def test_throughput_monotone_in_allocation(self, users, a, b):
        cfg = SliceConfig(degradation_exponent=12.0)
        lo, hi = sorted((a, b))
        assert serve(users, lo, 0.0, cfg)[1] <= serve(users, hi, 0.0, cfg)[1]

    @given(users=st.integers(0, 40), alloc=st.floats(500, 4000))
    def test_zero_noise_usage_exact(self, users, alloc):
        cfg = SliceConfig()
        assert serve(users, alloc, 0.0, cfg)[0] == min(alloc, users * cfg.per_ue_demand_mc)


class TestEnv:
    def test_step_before_reset(self, cfg):
        with pytest.raises(ContractViolation):
            SliceEnv(cfg).step()

    @pytest.mark.parametrize("mc", [499.9, 4000.1])
    def test_limit_out_of_range(self, cfg, mc):
        env = SliceEnv(cfg)
        env.reset(0)
        with pytest.raises(ContractViolation):
            env.apply_cpu_limit(mc)

    def test_limit_applies_to_same_step(self, cfg):
        env = SliceEnv(cfg)
        obs = env.reset(3)
        env.apply_cpu_limit(1234.0)
        _, sample = env.step()
        assert sample.allocation_mc == 1234.0
        assert sample.active_users == round(obs.traffic_norm * cfg.traffic_norm_max)

    def test_observation_carries_previous_usage(self, cfg):
        env = SliceEnv(cfg)
        env.reset(3)
        env.apply_cpu_limit(2000.0)
        obs, sample = env.step()
        assert obs.cpu_usage_norm == pytest.approx(sample.cpu_usage_mc / cfg.load_norm_max_mc)

    def test_bit_identical_replay(self, cfg):
        def run():
            env = SliceEnv(cfg)
            env.reset(11)
            out = []
            for t in range(300):
                env.apply_cpu_limit(500.0 + (t * 37) % 3500)
                out.append(env.step()[1])
            return out

        assert run() == run()

    def test_session_window_sums_arrivals(self):
        cfg = SliceConfig(session_len_s=3)
        env = SliceEnv(cfg)
        env.reset(5)
        window = list(env.state.window)
        for _ in range(50):
            env.apply_cpu_limit(4000.0)
            _, sample = env.step()
            assert sample.active_users == sum(window)
            window = (window + [env.state.window[-1]])[-3:]

    def test_env_step_direct(self):
        cfg = SliceConfig(usage_noise_rel=0.0, degradation_exponent=3.0)
        state = EnvState(active_users=10, allocation_mc=700.0, noise_rng=np.random.default_rng(0))
        sample = env_step(state, cfg)
        assert sample.throughput_mbps == pytest.approx(0.3125, abs=1e-12)
        assert sample.cpu_usage_mc == 700.0
        assert state.step == 1

    def test_static_path_length(self, cfg):
        users, usage, thr = simulate_static(cfg, 1500.0, 900, 0)
        assert users.shape == usage.shape == thr.shape == (900,)


class TestBetaMonotone:
    def test_nonincreasing_in_allocation(self, cfg):
        grid = np.arange(500, 4001, 250)
        betas = [static_beta(cfg, mc, 900, range(10)) for mc in grid]
        assert all(b2 <= b1 + 0.01 for b1, b2 in zip(betas, betas[1:]))
        assert betas[0] > betas[-1]


class TestCalibrate:
    def test_reaches_target(self, cfg):
        res = calibrate(cfg, 2945.72, 0.10)
        assert 0.07 <= res.achieved_beta <= 0.13
        assert res.config.traffic_mean == cfg.traffic_mean
        assert static_beta(res.config, 2945.72, 900, range(10)) == res.achieved_beta

    def test_deterministic(self, cfg):
        grid = {"traffic_std": (3.0, 4.0), "session_len_s": (1,), "degradation_exponent": (8.0, 16.0)}
        a = calibrate(cfg, 2945.72, 0.10, grid=grid, tolerance=0.2)
        b = calibrate(cfg, 2945.72, 0.10, grid=grid, tolerance=0.2)
        assert a == b

    def test_impossible_target(self):
        cfg = SliceConfig(usage_noise_rel=0.0)
        grid = {"traffic_std": (0.0,), "session_len_s": (1,), "degradation_exponent": (1.0, 8.0)}
        with pytest.raises(CalibrationError) as info:
            calibrate(cfg, cfg.cpu_max_mc, 0.10, grid=grid)
        assert info.value.best_beta == 0.0

    @pytest.mark.parametrize("target", [0.0, 1.0, -0.1])
    def test_bad_target(self, cfg, target):
        with pytest.raises(ValueError):
            calibrate(cfg, 2945.72, target)
