import pytest
from click.testing import CliRunner

from rlloop.cli import main
from rlloop.core import calibrated_config, load_config
from rlloop.harness import read_trace


def invoke(*args):
    result = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


def parse_summary(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "train"
    result = invoke("train", "--seed", 3, "--episodes", 1, "--steps", 96, "--out", out)
    assert result.exit_code == 0, result.output
    return out


class TestTrain:
    def test_outputs(self, trained):
        assert {p.name for p in trained.iterdir()} == {
            "train_trace.csv",
            "reward_curve.csv",
            "train_summary.txt",
            "policy.ckpt",
        }
        assert len(read_trace(trained / "train_trace.csv")) == 96
        curve = (trained / "reward_curve.csv").read_text().splitlines()
        assert curve[0] == "step,reward,moving_avg" and len(curve) == 97
        summary = parse_summary((trained / "train_summary.txt").read_text())
        assert summary["updates"] == "3" and summary["complete"] == "true"

    def test_explicit_checkpoint(self, tmp_path):
        ckpt = tmp_path / "elsewhere.ckpt"
        result = invoke("train", "--episodes", 1, "--steps", 40, "--out", tmp_path / "o", "--checkpoint", ckpt)
        assert result.exit_code == 0 and ckpt.exists()


class TestEval:
    def test_ppo_needs_checkpoint(self, tmp_path):
        result = CliRunner().invoke(main, ["eval", "--out", str(tmp_path)])
        assert result.exit_code != 0 and "--checkpoint" in result.output

    def test_ppo(self, trained, tmp_path):
        result = invoke(
            "eval", "--checkpoint", trained / "policy.ckpt", "--steps", 50, "--episodes", 2, "--out", tmp_path
        )
        assert result.exit_code == 0
        summary = parse_summary(result.output)
        assert summary["steps"] == "100" and summary["controller"] == "ppo"

    @pytest.mark.parametrize("controller", ["static", "threshold", "proportional"])
    def test_baselines(self, tmp_path, controller):
        result = invoke("eval", "--controller", controller, "--steps", 30, "--out", tmp_path)
        assert result.exit_code == 0
        summary = parse_summary(result.output)
        assert float(summary["reward_check_max_err"]) <= 1e-12
        assert "cpu_ratio" in summary

    def test_static_reference(self, tmp_path):
        result = invoke("eval", "--controller", "static", "--steps", 30, "--out", tmp_path)
        summary = parse_summary(result.output)
        assert float(summary["mean_allocation_mc"]) == pytest.approx(2945.72)
        assert float(summary["cpu_ratio"]) == pytest.approx(1.0)

    def test_bad_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_text("garbage\n")
        result = CliRunner().invoke(main, ["eval", "--checkpoint", str(bad), "--out", str(tmp_path)])
        assert result.exit_code == 1 and "checkpoint" in result.output


class TestOthers:
    def test_sweep(self, tmp_path):
        result = invoke("sweep", "--episodes", 2, "--steps", 50, "--grid", "500,1500", "--out", tmp_path)
        assert result.exit_code == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("allocation_mc,mean_reward,beta,sla_fraction") and len(lines) == 3

    def test_sweep_bad_grid(self, tmp_path):
        result = CliRunner().invoke(main, ["sweep", "--grid", "100,x", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_calibrate_reproduces_shipped_config(self, tmp_path):
        result = invoke("calibrate", "--out", tmp_path)
        assert result.exit_code == 0
        assert load_config(tmp_path / "calibrated.cfg") == calibrated_config()

    def test_analyze(self, trained, tmp_path):
        result = invoke("analyze", trained / "train_trace.csv", "--out", tmp_path)
        assert result.exit_code == 0
        summary = parse_summary(result.output)
        assert float(summary["reward_check_max_err"]) <= 1e-6
        assert summary["steps"] == "96"
        assert (tmp_path / "analysis.txt").read_text() == result.output

    def test_analyze_malformed(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("step,active_users,cpu_usage_mc,throughput_mbps,allocation_mc,reward\n0,1,2\n")
        result = CliRunner().invoke(main, ["analyze", str(bad), "--out", str(tmp_path)])
        assert result.exit_code == 1 and "bad.csv:2" in result.output

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("traffic_mean=5\nbogus=1\n")
        result = CliRunner().invoke(main, ["eval", "--controller", "static", "--config", str(cfg)])
        assert result.exit_code == 1 and "line 2" in result.output
