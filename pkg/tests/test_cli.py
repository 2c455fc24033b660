"""Command surface: output contracts and exit codes."""

import json

import pytest
from click.testing import CliRunner

from hsnet.cli import main
from hsnet.data import write_cifar10, synth_blobs
from hsnet.tensor import Rng


@pytest.fixture()
def runner():
    return CliRunner()


class TestPlan:
    def test_prints_out_widths_and_sum(self, runner):
        result = runner.invoke(main, ["plan", "--s", "5", "--w", "4"])
        assert result.exit_code == 0
        assert "[4, 2, 3, 4, 7]" in result.output
        assert "sum=20" in result.output

    def test_invalid_s_is_usage_error(self, runner):
        result = runner.invoke(main, ["plan", "--s", "1", "--w", "4"])
        assert result.exit_code == 2

    def test_unknown_flag(self, runner):
        result = runner.invoke(main, ["plan", "--s", "5", "--w", "4", "--bogus"])
        assert result.exit_code == 2


class TestAnalyze:
    def test_resnet50_preset_total(self, runner):
        result = runner.invoke(main, ["analyze", "--preset", "resnet50"])
        assert result.exit_code == 0
        assert "25.56M" in result.output

    def test_needs_exactly_one_source(self, runner):
        assert runner.invoke(main, ["analyze"]).exit_code == 2

    def test_config_file(self, runner, tmp_path):
        doc = {"version": 1, "network": {"preset": "tiny-hs"}}
        path = tmp_path / "net.json"
        path.write_text(json.dumps(doc))
        result = runner.invoke(main, ["analyze", "--config", str(path)])
        assert result.exit_code == 0
        assert "params total" in result.output

    def test_malformed_json_is_usage_error(self, runner, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert runner.invoke(main, ["analyze", "--config", str(path)]).exit_code == 2

    def test_unknown_config_key_is_usage_error(self, runner, tmp_path):
        doc = {"version": 1, "network": {"preset": "tiny-hs", "depht": 50}}
        path = tmp_path / "typo.json"
        path.write_text(json.dumps(doc))
        assert runner.invoke(main, ["analyze", "--config", str(path)]).exit_code == 2


class TestReconcile:
    def test_writes_csv_and_prints_table(self, runner, tmp_path):
        out = tmp_path / "sweep.csv"
        result = runner.invoke(main, ["reconcile", "--out", str(out)])
        assert result.exit_code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("preset,variant,width_rule,params_total")
        assert len(lines) == 14  # header + control + 12 sweep rows
        assert "closest parameter budget" in result.output


class TestGradcheck:
    def test_tiny_preset_passes(self, runner):
        result = runner.invoke(
            main, ["gradcheck", "--preset", "tiny-hs", "--samples", "5"]
        )
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output


class TestTrainEval:
    def test_train_then_eval_round_trip(self, runner, tmp_path):
        config = {
            "version": 1,
            "seed": 7,
            "network": {"preset": "tiny-hs"},
            "train": {"epochs": 1, "batch_size": 64, "base_lr": 0.05},
            "data": {"kind": "synth", "k": 10, "n_per_class": 20, "n_eval_per_class": 4},
        }
        cfg_path = tmp_path / "train.json"
        cfg_path.write_text(json.dumps(config))
        out_dir = tmp_path / "run"
        result = runner.invoke(
            main, ["train", "--config", str(cfg_path), "--out", str(out_dir)]
        )
        assert result.exit_code == 0, result.output
        assert (out_dir / "log.jsonl").exists()
        assert (out_dir / "best.ckpt").exists()

        data_path = tmp_path / "eval.bin"
        write_cifar10(synth_blobs(10, 5, 32, Rng(3)), data_path)
        result = runner.invoke(
            main,
            ["eval", "--checkpoint", str(out_dir / "best.ckpt"), "--data", str(data_path)],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output.strip().split("\n")[-1])
        assert 0.0 <= payload["top1"] <= payload["top5"] <= 1.0

    def test_corrupt_checkpoint_is_runtime_error(self, runner, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"HSNT" + b"\x00" * 64)
        data_path = tmp_path / "eval.bin"
        write_cifar10(synth_blobs(10, 2, 32, Rng(0)), data_path)
        result = runner.invoke(
            main, ["eval", "--checkpoint", str(path), "--data", str(data_path)]
        )
        assert result.exit_code == 1

    def test_missing_train_config_key_fails_loudly(self, runner, tmp_path):
        config = {"version": 1, "network": {"preset": "tiny-hs"}, "train": {"epocs": 3}}
        cfg_path = tmp_path / "typo.json"
        cfg_path.write_text(json.dumps(config))
        result = runner.invoke(
            main, ["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
