import json

import numpy as np
import pytest
from click.testing import CliRunner

from graphda import checks, cli, data, network, train
from graphda.graphs import DomainTag


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, **overrides):
    cfg = {
        "method": "dage-lda",
        "dataset": {"kind": "synth", "n_per_class": 15, "classes": 3, "dim": 2,
                    "translation": [2.0, 0.0], "seed": 0},
        "network": {"kind": "mlp", "input_dim": 2, "hidden": [8], "classes": 3},
        "split": {"target_per_class": 5},
        "optimizer": {"lr": 5e-3, "momentum": 0.9},
        "epochs": 3,
        "batch_size": 16,
        "repeats": 1,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestGradcheck:
    def test_passes(self, runner):
        result = runner.invoke(cli.main, ["gradcheck", "--seed", "0"])
        assert result.exit_code == cli.EXIT_OK
        lines = [l for l in result.output.splitlines() if l]
        assert len(lines) == len(checks.TOLERANCES)
        assert all(l.endswith("PASS") for l in lines)

    def test_corrupted_gradient_fails(self, runner, monkeypatch):
        # negative control: a broken gradient must flip the verdict
        real = checks.full_report

        def broken(seed=0):
            report = real(seed=seed)
            report["trace_ratio"] = 1.0
            return report

        monkeypatch.setattr(cli.checks, "full_report", broken)
        result = runner.invoke(cli.main, ["gradcheck"])
        assert result.exit_code == cli.EXIT_FAIL
        assert "FAIL" in result.output


class TestOracle:
    def test_pass_and_report(self, runner):
        result = runner.invoke(cli.main, ["oracle", "--seed", "3"])
        assert result.exit_code == cli.EXIT_OK
        assert "spectral optimum" in result.output
        assert "gradient descent" in result.output
        assert "PASS" in result.output

    def test_strict_tolerance_can_fail(self, runner):
        result = runner.invoke(cli.main, ["oracle", "--seed", "3",
                                          "--tolerance", "1e-30"])
        assert result.exit_code == cli.EXIT_FAIL


class TestTrain:
    def test_end_to_end(self, runner, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "out"
        result = runner.invoke(cli.main, ["train", "--config", config,
                                          "--out", str(out)])
        assert result.exit_code == cli.EXIT_OK, result.output
        assert "target accuracy" in result.output
        assert (out / "checkpoint_0.bin").exists()
        lines = (out / "metrics.jsonl").read_text().splitlines()
        records = [json.loads(l) for l in lines]
        assert any("epoch" in r for r in records)
        assert any("test_accuracy" in r for r in records)

    def test_bad_config_exit_code(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"method": "nonsense"}))
        result = runner.invoke(cli.main, ["train", "--config", str(path),
                                          "--out", str(tmp_path / "o")])
        assert result.exit_code == cli.EXIT_CONFIG
        assert "configuration error" in result.output

    def test_malformed_json(self, runner, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        result = runner.invoke(cli.main, ["train", "--config", str(path),
                                          "--out", str(tmp_path / "o")])
        assert result.exit_code == cli.EXIT_CONFIG

    def test_data_root_resolution(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GRAPHDA_DATA", "/data/root")
        cfg = {
            "method": "ccsa",
            "dataset": {"kind": "digits",
                        "source_images": "s-img.idx", "source_labels": "s-lab.idx",
                        "target_images": "/abs/t-img.idx", "target_labels": "t-lab.idx"},
            "network": {"kind": "mlp", "input_dim": 4, "classes": 2},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        loaded = cli._load_config(str(path))
        assert loaded.dataset["source_images"] == "/data/root/s-img.idx"
        # absolute paths are left alone
        assert loaded.dataset["target_images"] == "/abs/t-img.idx"


class TestEval:
    def test_checkpoint_on_idx(self, runner, tmp_path):
        rng = np.random.default_rng(0)
        spec = network.lenet_like_spec(input_hw=28, classes=3)
        net = network.Network(spec, seed=0)
        ckpt = tmp_path / "model.bin"
        network.save_checkpoint(net, ckpt)
        images = rng.integers(0, 256, size=(6, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 3, 6)
        data.save_idx_images(tmp_path / "i.idx", images)
        data.save_idx_labels(tmp_path / "l.idx", labels)
        out = tmp_path / "report.json"
        result = runner.invoke(cli.main, [
            "eval", "--checkpoint", str(ckpt), "--images", str(tmp_path / "i.idx"),
            "--labels", str(tmp_path / "l.idx"), "--out", str(out)])
        assert result.exit_code == cli.EXIT_OK, result.output
        report = json.loads(out.read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        confusion = np.array(report["confusion"])
        assert confusion.shape == (3, 3)
        assert confusion.sum() == 6
        # the accuracy matches a direct evaluation of the same checkpoint
        ds = data.load_digit_dataset(tmp_path / "i.idx", tmp_path / "l.idx",
                                     DomainTag.TARGET, "t", num_classes=3,
                                     target_hw=28)
        acc, _ = train.evaluate(net, ds)
        assert report["accuracy"] == pytest.approx(acc)

    def test_label_mismatch_is_config_error(self, runner, tmp_path):
        net = network.Network(network.lenet_like_spec(classes=2), seed=0)
        ckpt = tmp_path / "model.bin"
        network.save_checkpoint(net, ckpt)
        data.save_idx_images(tmp_path / "i.idx",
                             np.zeros((3, 28, 28), dtype=np.uint8))
        data.save_idx_labels(tmp_path / "l.idx", [0, 1])
        result = runner.invoke(cli.main, [
            "eval", "--checkpoint", str(ckpt), "--images", str(tmp_path / "i.idx"),
            "--labels", str(tmp_path / "l.idx")])
        assert result.exit_code == cli.EXIT_CONFIG
        assert "dataset error" in result.output


class TestSearch:
    def test_small_budget(self, runner, tmp_path):
        config = write_config(tmp_path, epochs=2)
        out = tmp_path / "leaderboard.jsonl"
        result = runner.invoke(cli.main, ["search", "--config", config,
                                          "--budget", "2", "--seed", "0",
                                          "--out", str(out)])
        assert result.exit_code == cli.EXIT_OK, result.output
        best = json.loads(result.output.splitlines()[-1])
        assert "sample" in best and "accuracy" in best
        assert len(out.read_text().splitlines()) == 2


def test_help_lists_verbs(runner):
    result = runner.invoke(cli.main, ["--help"])
    assert result.exit_code == 0
    for verb in ("gradcheck", "oracle", "train", "eval", "search"):
        assert verb in result.output
