import json

import numpy as np
import pytest

from graphda import data, losses, network, train
from graphda.graphs import DomainTag


def synth_config(method="dage-lda", **overrides):
    cfg = {
        "method": method,
        "dataset": {"kind": "synth", "n_per_class": 20, "classes": 3, "dim": 2,
                    "angle": 0.6, "translation": [2.0, -1.0], "seed": 0},
        "network": {"kind": "mlp", "input_dim": 2, "hidden": [16, 8], "classes": 3},
        "split": {"target_per_class": 3},
        "optimizer": {"lr": 5e-3, "momentum": 0.9},
        "epochs": 5,
        "batch_size": 16,
        "seed": 0,
        "repeats": 1,
    }
    cfg.update(overrides)
    return train.ExperimentConfig.from_dict(cfg)


class TestConfig:
    def test_unknown_method(self):
        with pytest.raises(train.ConfigError):
            synth_config(method="adversarial")

    def test_missing_keys(self):
        with pytest.raises(train.ConfigError):
            train.ExperimentConfig.from_dict({"method": "ccsa"})

    def test_loss_ratio_mapping(self):
        cfg = synth_config(loss_ratios={"da_ce": 0.25, "st_ce": 0.6})
        assert cfg.da_weight == pytest.approx(0.25)
        assert cfg.weights.beta == pytest.approx(0.75 * 0.6)
        assert cfg.weights.gamma == pytest.approx(0.75 * 0.4)
        # the three coefficients form a convex combination
        assert cfg.da_weight + cfg.weights.beta + cfg.weights.gamma == pytest.approx(1.0)

    def test_loss_ratio_range(self):
        with pytest.raises(train.ConfigError):
            synth_config(loss_ratios={"da_ce": 1.5, "st_ce": 0.5})

    def test_network_preset(self):
        cfg = synth_config(network="lenet")
        assert cfg.network_spec["input_shape"] == [1, 28, 28]
        with pytest.raises(train.ConfigError):
            synth_config(network="resnet")

    def test_batch_size_floor(self):
        with pytest.raises(train.ConfigError):
            synth_config(batch_size=1)

    def test_from_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "method": "ccsa",
            "dataset": {"kind": "synth"},
            "network": {"kind": "mlp", "input_dim": 2, "classes": 3},
        }))
        cfg = train.ExperimentConfig.from_json(path)
        assert cfg.method == "ccsa"


class TestEvaluate:
    def test_perfect_and_confusion(self):
        net = network.Network(network.mlp_spec(2, [4], 2), seed=0)
        ds = data.Dataset(np.array([[5.0, 0.0], [-5.0, 0.0]]), [0, 1],
                          DomainTag.TARGET, "t", 2)
        pred = net.predict(ds.x).argmax(axis=1)
        acc, confusion = train.evaluate(net, ds)
        assert confusion.sum() == 2
        assert acc == pytest.approx(np.mean(pred == ds.y))
        np.testing.assert_array_equal(confusion.sum(axis=1), [1, 1])

    def test_batched_equals_whole(self):
        rng = np.random.default_rng(0)
        net = network.Network(network.mlp_spec(3, [5], 4), seed=1)
        ds = data.Dataset(rng.standard_normal((50, 3)), rng.integers(0, 4, 50),
                          DomainTag.TARGET, "t", 4)
        a = train.evaluate(net, ds, batch_size=7)
        b = train.evaluate(net, ds, batch_size=256)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])


class TestOneHot:
    def test_values(self):
        out = train.one_hot(np.array([2, 0]), 3)
        np.testing.assert_array_equal(out, [[0, 0, 1], [1, 0, 0]])


class TestSiameseStep:
    def setup_batch(self, seed=0):
        rng = np.random.default_rng(seed)
        xs = rng.standard_normal((6, 2))
        xt = rng.standard_normal((5, 2))
        ys = np.array([0, 1, 2, 0, 1, 2])
        yt = np.array([0, 1, 2, 0, 1])
        return xs, ys, xt, yt

    @pytest.mark.parametrize("method", train.METHODS[:3])
    def test_loss_decreases(self, method):
        xs, ys, xt, yt = self.setup_batch()
        net = network.Network(network.mlp_spec(2, [8], 3), seed=0)
        opt = network.SGD(lr=1e-3)
        weights = losses.LossWeights()
        da_weight = 0.01 if method == "dsne" else 1.0
        rng = np.random.default_rng(0)
        first = train.siamese_step(net, opt, method, xs, ys, xt, yt,
                                   weights, da_weight, rng)
        for _ in range(30):
            last = train.siamese_step(net, opt, method, xs, ys, xt, yt,
                                      weights, da_weight, rng)
        assert last["total"] < first["total"]

    def test_weight_sharing_by_construction(self):
        # both streams run through one network object, so after a step the
        # embeddings of identical inputs remain identical
        xs, ys, xt, yt = self.setup_batch()
        net = network.Network(network.mlp_spec(2, [8], 3), seed=0)
        opt = network.SGD(lr=1e-3)
        train.siamese_step(net, opt, "dage-lda", xs, ys, xt, yt,
                           losses.LossWeights(), 1.0, np.random.default_rng(0))
        same = np.ones((2, 2))
        a, _ = net.embed(same)
        b, _ = net.embed(same)
        np.testing.assert_array_equal(a, b)

    def test_baseline_methods_no_da_term(self):
        xs, ys, xt, yt = self.setup_batch()
        net = network.Network(network.mlp_spec(2, [8], 3), seed=0)
        comp, _ = train.siamese_grads(net, "source-only", xs, ys, xt, yt,
                                      losses.LossWeights(), 1.0, training=False)
        assert comp["da"] == 0.0


class TestValidationSplit:
    def test_holds_out_per_class(self):
        rng = np.random.default_rng(0)
        ds = data.Dataset(rng.standard_normal((30, 2)),
                          np.repeat(np.arange(3), 10), DomainTag.TARGET, "t", 3)
        fit, val = train._validation_split(ds, seed=0)
        assert val is not None
        assert len(fit) + len(val) == 30
        assert np.bincount(val.y, minlength=3).min() >= 1

    def test_disabled_when_too_few(self):
        rng = np.random.default_rng(0)
        ds = data.Dataset(rng.standard_normal((4, 2)), [0, 1, 2, 0],
                          DomainTag.TARGET, "t", 3)
        fit, val = train._validation_split(ds, seed=0)
        assert val is None
        assert len(fit) == 4


class TestTrainRun:
    def test_records_and_early_stop_fields(self):
        cfg = synth_config(epochs=4)
        source, target = train._build_datasets(cfg)
        src_train, _ = data.sample_protocol(source, 10, seed=1)
        tgt_train, _ = data.sample_protocol(target, 5, seed=2)
        sink_records = []
        net, records = train.train_run(cfg, src_train, tgt_train, seed=0,
                                       metrics_sink=sink_records.append,
                                       run_id="unit")
        assert len(records) == 4
        assert records == sink_records
        for i, rec in enumerate(records):
            assert rec["run_id"] == "unit"
            assert rec["epoch"] == i
            assert set(rec["loss"]) == {"da", "ce_source", "ce_target", "total"}
            assert rec["wall_clock"] >= 0.0
        assert records[-1]["step"] > records[0]["step"]

    def test_early_stopping_restores_best(self):
        # huge lr makes later epochs worse; the returned net must match the
        # best validation epoch, not the last one
        cfg = synth_config(epochs=10, patience=2, optimizer={"lr": 0.5})
        source, target = train._build_datasets(cfg)
        src_train, _ = data.sample_protocol(source, 10, seed=1)
        tgt_train, _ = data.sample_protocol(target, 10, seed=2)
        net, records = train.train_run(cfg, src_train, tgt_train, seed=0)
        best_val = max(r["val_accuracy"] for r in records)
        _, val = train._validation_split(tgt_train, seed=0 + 2)
        acc, _ = train.evaluate(net, val)
        assert acc == pytest.approx(best_val)

    def test_determinism(self):
        cfg = synth_config(epochs=2)
        source, target = train._build_datasets(cfg)
        src_train, _ = data.sample_protocol(source, 8, seed=1)
        tgt_train, _ = data.sample_protocol(target, 4, seed=2)
        net_a, rec_a = train.train_run(cfg, src_train, tgt_train, seed=3)
        net_b, rec_b = train.train_run(cfg, src_train, tgt_train, seed=3)
        for pa, pb in zip(net_a.parameters(), net_b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert [r["loss"] for r in rec_a] == [r["loss"] for r in rec_b]


class TestRunExperiment:
    def test_repeats_and_summary(self, tmp_path):
        cfg = synth_config(repeats=2, epochs=3)
        sink_records = []
        result = train.run_experiment(cfg, out_dir=str(tmp_path),
                                      metrics_sink=sink_records.append)
        assert len(result["accuracies"]) == 2
        assert result["mean_accuracy"] == pytest.approx(np.mean(result["accuracies"]))
        assert result["std_accuracy"] == pytest.approx(np.std(result["accuracies"]))
        assert result["failures"] == []
        assert (tmp_path / "checkpoint_0.bin").exists()
        assert (tmp_path / "checkpoint_1.bin").exists()
        test_records = [r for r in sink_records if "test_accuracy" in r]
        assert sorted(r["test_accuracy"] for r in test_records) == sorted(
            result["accuracies"])
        # per-epoch records expose validation accuracy only, never test
        epoch_records = [r for r in sink_records if "epoch" in r]
        assert epoch_records and all("test_accuracy" not in r for r in epoch_records)

    def test_adaptation_beats_target_only(self):
        accs = {}
        for method in ("dage-lda", "ft-target"):
            cfg = synth_config(method=method, epochs=12, repeats=2,
                               optimizer={"lr": 5e-3, "momentum": 0.9})
            accs[method] = train.run_experiment(cfg)["mean_accuracy"]
        assert accs["dage-lda"] > accs["ft-target"]

    def test_all_failures_raise(self):
        # an absurd learning rate overflows the activations; the rejected
        # non-finite gradients surface as run failures
        cfg = synth_config(epochs=3, optimizer={"lr": 1e30})
        with pytest.raises(RuntimeError, match="all runs failed"):
            train.run_experiment(cfg)


def test_jsonl_sink(tmp_path):
    path = tmp_path / "metrics.jsonl"
    sink = train.jsonl_sink(path)
    sink({"b": 1, "a": 2})
    sink({"x": [1, 2]})
    sink.close()
    lines = path.read_text().splitlines()
    assert lines[0] == '{"a": 2, "b": 1}'
    assert json.loads(lines[1]) == {"x": [1, 2]}
