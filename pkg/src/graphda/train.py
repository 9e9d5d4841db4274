"""Siamese training loop, evaluation, and experiment orchestration.

One network instance serves both streams, so the streams share weights by
construction; per-stream parameter gradients are summed before the
optimizer step. The target test split is only constructed after training
finishes, so no test sample can influence early stopping.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from . import losses, network
from .graphs import BatchMeta, DomainTag, intrinsic_weights, laplacian, penalty_weights

METHODS = ("dage-lda", "ccsa", "dsne", "ft-target", "source-only")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    method: str
    dataset: dict
    network_spec: dict
    split: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    weights: losses.LossWeights = losses.LossWeights()
    da_weight: float = 1.0
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    repeats: int = 1
    pair_ratio: float = 3.0
    patience: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")

    @classmethod
    def from_dict(cls, cfg: dict):
        cfg = dict(cfg)
        try:
            w = dict(cfg.pop("weights", {}))
            ratios = cfg.pop("loss_ratios", None)
            da_weight = cfg.pop("da_weight", 1.0)
            if ratios is not None:
                # two-ratio parameterization: total = r*L_DA + (1-r)*(s*CE_S + (1-s)*CE_T)
                r, s = float(ratios["da_ce"]), float(ratios["st_ce"])
                if not (0.0 < r < 1.0 and 0.0 <= s <= 1.0):
                    raise ConfigError("loss ratios out of range")
                da_weight = r
                w["beta"] = (1.0 - r) * s
                w["gamma"] = (1.0 - r) * (1.0 - s)
            weights = losses.LossWeights(**w)
            net_spec = cfg.pop("network")
            if isinstance(net_spec, str):
                if net_spec == "lenet":
                    net_spec = network.lenet_like_spec()
                else:
                    raise ConfigError(f"unknown network preset {net_spec!r}")
            elif net_spec.get("kind") == "mlp":
                net_spec = network.mlp_spec(
                    net_spec["input_dim"], net_spec.get("hidden", [16, 8]),
                    net_spec["classes"], net_spec.get("keep_prob", 1.0))
            return cls(
                method=cfg.pop("method"),
                dataset=cfg.pop("dataset"),
                network_spec=net_spec,
                split=cfg.pop("split", {}),
                optimizer=cfg.pop("optimizer", {}),
                weights=weights,
                da_weight=da_weight,
                **cfg,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def one_hot(y, num_classes):
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def evaluate(net, dataset, batch_size=256):
    """Target accuracy and per-class confusion matrix (rows = true class)."""
    k = dataset.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        xb = dataset.x[start:start + batch_size]
        yb = dataset.y[start:start + batch_size]
        pred = net.predict(xb).argmax(axis=1)
        np.add.at(confusion, (yb, pred), 1)
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    return accuracy, confusion


def _da_loss_and_grads(method, phi_s, phi_t, ys, yt, weights):
    """Per-batch domain-adaptation loss and its embedding gradients."""
    if method == "dage-lda":
        meta = BatchMeta(
            np.concatenate([ys, yt]),
            np.concatenate([np.full(ys.size, DomainTag.SOURCE),
                            np.full(yt.size, DomainTag.TARGET)]),
        )
        lap = laplacian(intrinsic_weights(meta))
        pen = laplacian(penalty_weights(meta))
        phi = np.concatenate([phi_s, phi_t], axis=1)
        value = losses.trace_ratio_loss(phi, lap, pen, weights.epsilon)
        grad = losses.trace_ratio_grad(phi, lap, pen, weights.epsilon)
        return value, grad[:, :ys.size], grad[:, ys.size:]
    if method == "ccsa":
        value = losses.contrastive_loss(phi_s, phi_t, ys, yt, weights.margin)
        gs, gt = losses.contrastive_grad(phi_s, phi_t, ys, yt, weights.margin)
        return value, gs, gt
    if method == "dsne":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            value = losses.neighbourhood_loss(phi_s, phi_t, ys, yt)
        gs, gt = losses.neighbourhood_grad(phi_s, phi_t, ys, yt)
        return value, gs, gt
    return 0.0, np.zeros_like(phi_s), np.zeros_like(phi_t)


def siamese_grads(net, method, xs, ys, xt, yt, weights, da_weight, rng=None,
                  training=True):
    """Joint objective and its parameter gradients for one batch pair.

    Both streams run through the same network; their parameter gradients
    are summed. Returns (components, grads) with grads aligned with
    `net.parameters()`.
    """
    phi_s, cache_s = net.embed(xs, training=training, rng=rng)
    phi_t, cache_t = net.embed(xt, training=training, rng=rng)
    probs_s, ccache_s = net.classify(phi_s)
    probs_t, ccache_t = net.classify(phi_t)
    onehot_s = one_hot(ys, net.classes)
    onehot_t = one_hot(yt, net.classes)
    ce_s = losses.cross_entropy(onehot_s, probs_s)
    ce_t = losses.cross_entropy(onehot_t, probs_t)
    da_value, da_gs, da_gt = _da_loss_and_grads(method, phi_s, phi_t, ys, yt, weights)
    total = losses.total_objective(da_value, ce_s, ce_t, weights, da_weight)

    dphi_s, cgrads_s = net.backward_classifier(weights.beta * (probs_s - onehot_s), ccache_s)
    dphi_t, cgrads_t = net.backward_classifier(weights.gamma * (probs_t - onehot_t), ccache_t)
    fgrads_s = net.backward_features(dphi_s + da_weight * da_gs, cache_s)
    fgrads_t = net.backward_features(dphi_t + da_weight * da_gt, cache_t)
    grads = [a + b for a, b in zip(fgrads_s, fgrads_t)]
    grads += [a + b for a, b in zip(cgrads_s, cgrads_t)]
    components = {"da": da_value, "ce_source": ce_s, "ce_target": ce_t, "total": total}
    return components, grads


def siamese_step(net, opt, method, xs, ys, xt, yt, weights, da_weight, rng):
    """One joint update from a source batch and a target batch.

    Returns the loss components of the batch before the update.
    """
    components, grads = siamese_grads(net, method, xs, ys, xt, yt, weights,
                                      da_weight, rng)
    opt.step(net.parameters(), grads)
    return components


def single_stream_step(net, opt, xb, yb, rng):
    """Plain cross-entropy update on one batch (baseline methods)."""
    phi, cache = net.embed(xb, training=True, rng=rng)
    probs, ccache = net.classify(phi)
    onehot = one_hot(yb, net.classes)
    ce = losses.cross_entropy(onehot, probs)
    dphi, cgrads = net.backward_classifier(probs - onehot, ccache)
    fgrads = net.backward_features(dphi, cache)
    opt.step(net.parameters(), fgrads + cgrads)
    return {"da": 0.0, "ce_source": 0.0, "ce_target": ce, "total": ce}


def _validation_split(target_train, seed):
    """Hold out ~10% of the target training samples (>= 1 per class) for
    early stopping. With a single sample per class there is nothing to
    spare, so no split is made and early stopping is disabled."""
    counts = np.bincount(target_train.y, minlength=target_train.num_classes)
    if counts.min() < 2:
        return target_train, None
    per_class = max(1, int(round(0.1 * counts.min())))
    rng = np.random.default_rng(seed)
    val_idx = []
    for k in range(target_train.num_classes):
        pool = np.flatnonzero(target_train.y == k)
        val_idx.append(rng.choice(pool, size=per_class, replace=False))
    val_idx = np.concatenate(val_idx)
    mask = np.ones(len(target_train), dtype=bool)
    mask[val_idx] = False
    return target_train.subset(np.flatnonzero(mask)), target_train.subset(val_idx)


def _snapshot(net):
    return [p.copy() for p in net.parameters()]


def _restore(net, snap):
    for p, s in zip(net.parameters(), snap):
        p[...] = s


def train_run(config: ExperimentConfig, source_train, target_train, seed,
              metrics_sink=None, run_id="run"):
    """Train one network on the given training splits.

    Returns (net, records) where records are the per-epoch metric dicts.
    Test data is deliberately not an argument: evaluation on the test
    split happens outside, after this function returns.
    """
    net = network.Network(config.network_spec, seed=seed)
    opt = network.SGD(
        lr=config.optimizer.get("lr", 0.01),
        momentum=config.optimizer.get("momentum", 0.0),
        decay=config.optimizer.get("decay", 0.0),
        l2=config.optimizer.get("l2", 0.0),
    )
    rng = np.random.default_rng(seed + 1)
    fit_target, val = _validation_split(target_train, seed + 2)
    if config.method == "ft-target":
        train_sets = ("target", fit_target)
    elif config.method == "source-only":
        train_sets = ("source", source_train)
    else:
        train_sets = None

    records = []
    best = (-1.0, None)
    stale = 0
    step = 0
    start_time = time.monotonic()
    if train_sets is None:
        pairs = data_mod.make_pairs(source_train, fit_target, config.pair_ratio,
                                    seed=seed + 3)
        batch_rng = np.random.default_rng(seed + 4)
    for epoch in range(config.epochs):
        components = {"da": 0.0, "ce_source": 0.0, "ce_target": 0.0, "total": 0.0}
        if train_sets is None:
            batches = data_mod.epoch_batches(pairs, fit_target, config.batch_size, batch_rng)
            for batch in batches:
                xs = source_train.x[batch.source_idx]
                ys = source_train.y[batch.source_idx]
                xt = fit_target.x[batch.target_idx]
                yt = fit_target.y[batch.target_idx]
                out = siamese_step(net, opt, config.method, xs, ys, xt, yt,
                                   config.weights, config.da_weight, rng)
                step += 1
                for key in components:
                    components[key] += out[key]
        else:
            _, ds = train_sets
            order = rng.permutation(len(ds))
            for start in range(0, len(ds), config.batch_size):
                idx = order[start:start + config.batch_size]
                out = single_stream_step(net, opt, ds.x[idx], ds.y[idx], rng)
                step += 1
                for key in components:
                    components[key] += out[key]

        val_acc = None
        if val is not None:
            val_acc, _ = evaluate(net, val)
            if val_acc > best[0]:
                best = (val_acc, _snapshot(net))
                stale = 0
            else:
                stale += 1
        record = {
            "run_id": run_id,
            "seed": seed,
            "epoch": epoch,
            "step": step,
            "loss": components,
            "val_accuracy": val_acc,
            "wall_clock": time.monotonic() - start_time,
        }
        records.append(record)
        if metrics_sink is not None:
            metrics_sink(record)
        if val is not None and stale > config.patience:
            break
    if best[1] is not None:
        _restore(net, best[1])
    return net, records


def _build_datasets(config: ExperimentConfig):
    ds = config.dataset
    kind = ds.get("kind", "synth")
    if kind == "synth":
        shift = data_mod.ShiftConfig(
            angle=ds.get("angle", 0.0),
            translation=tuple(ds.get("translation", ())),
            noise_scale=ds.get("noise_scale", 1.0),
        )
        return data_mod.synth_shift(
            ds.get("n_per_class", 50), ds.get("classes", 3), ds.get("dim", 2),
            shift, ds.get("seed", 0))
    if kind == "digits":
        source = data_mod.load_digit_dataset(
            ds["source_images"], ds["source_labels"], DomainTag.SOURCE,
            ds.get("source_name", "source"), target_hw=ds.get("image_size", 28),
            harmonize=ds.get("harmonize", "resize"))
        target = data_mod.load_digit_dataset(
            ds["target_images"], ds["target_labels"], DomainTag.TARGET,
            ds.get("target_name", "target"), target_hw=ds.get("image_size", 28),
            harmonize=ds.get("harmonize", "resize"))
        total = ds.get("source_total")
        if total is not None and total < len(source):
            rng = np.random.default_rng(ds.get("seed", 0))
            source = source.subset(rng.choice(len(source), size=total, replace=False))
        return source, target
    raise ConfigError(f"unknown dataset kind {kind!r}")


def run_experiment(config: ExperimentConfig, out_dir=None, metrics_sink=None):
    """Run `config.repeats` seeded training runs and aggregate test accuracy.

    Returns a summary dict with per-run accuracies and mean/std (population
    std over exactly `repeats` runs). Writes per-epoch metrics through
    `metrics_sink` and final checkpoints into `out_dir` when given.
    """
    source, target = _build_datasets(config)
    accuracies = []
    val_accuracies = []
    failures = []
    for r in range(config.repeats):
        seed = config.seed + r
        run_id = f"{config.method}-r{r}"
        split_seed = seed + 1000
        if config.split.get("source_per_class"):
            source_train, _ = data_mod.sample_protocol(
                source, config.split["source_per_class"], split_seed)
        else:
            source_train = source
        target_train, target_test = data_mod.sample_protocol(
            target, config.split.get("target_per_class", 3), split_seed + 1)
        try:
            net, records = train_run(config, source_train, target_train, seed,
                                     metrics_sink=metrics_sink, run_id=run_id)
        except ValueError as exc:
            failures.append({"run_id": run_id, "error": str(exc)})
            if metrics_sink is not None:
                metrics_sink({"run_id": run_id, "seed": seed, "failed": str(exc)})
            continue
        # the test split is only consumed here, after training has finished
        acc, _ = evaluate(net, target_test)
        accuracies.append(acc)
        val_accs = [rec["val_accuracy"] for rec in records
                    if rec.get("val_accuracy") is not None]
        val_accuracies.append(max(val_accs) if val_accs else None)
        if metrics_sink is not None:
            metrics_sink({"run_id": run_id, "seed": seed, "test_accuracy": acc})
        if out_dir is not None:
            network.save_checkpoint(net, f"{out_dir}/checkpoint_{r}.bin")
    if not accuracies:
        raise RuntimeError(f"all runs failed: {failures}")
    acc = np.array(accuracies)
    known_val = [v for v in val_accuracies if v is not None]
    return {
        "method": config.method,
        "accuracies": accuracies,
        "mean_accuracy": float(acc.mean()),
        "std_accuracy": float(acc.std()),
        "val_accuracies": val_accuracies,
        "mean_val_accuracy": float(np.mean(known_val)) if known_val else None,
        "failures": failures,
    }


def jsonl_sink(path):
    """Metric sink appending one stable-key-order JSON object per line."""
    f = open(path, "a")

    def sink(record):
        f.write(json.dumps(record, sort_keys=True) + "\n")
        f.flush()

    sink.close = f.close
    return sink
