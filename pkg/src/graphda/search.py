"""Random hyperparameter search over the standard search space.

Each hyperparameter is drawn independently from its prior:
  log-uniform          exp of a uniform draw between the log bounds
  uniform              uniform between the bounds
  inv-log-uniform      1 - log-uniform(1 - upper, 1 - lower); concentrates
                       mass near the upper bound (used for momentum)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .train import ExperimentConfig, run_experiment


@dataclass(frozen=True)
class Prior:
    lower: float
    upper: float
    kind: str  # "log-uniform" | "uniform" | "inv-log-uniform"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("prior needs lower < upper")
        if self.kind not in ("log-uniform", "uniform", "inv-log-uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")

    def sample(self, rng):
        if self.kind == "uniform":
            return float(rng.uniform(self.lower, self.upper))
        if self.kind == "log-uniform":
            return float(np.exp(rng.uniform(np.log(self.lower), np.log(self.upper))))
        lo, hi = 1.0 - self.upper, 1.0 - self.lower
        return 1.0 - float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def default_search_space(include_margin=False):
    """The standard eight-row search space; `include_margin` adds the
    contrastive margin row used only by the ccsa method."""
    space = {
        "learning_rate": Prior(1e-8, 1e-3, "log-uniform"),
        "learning_rate_decay": Prior(1e-7, 1e-2, "log-uniform"),
        "momentum": Prior(0.5, 0.99, "inv-log-uniform"),
        "dropout": Prior(0.1, 0.8, "uniform"),
        "l2_regularization": Prior(1e-7, 1e-3, "log-uniform"),
        "da_ce_loss_ratio": Prior(0.1, 0.99, "uniform"),
        "st_ce_loss_ratio": Prior(0.0, 1.0, "uniform"),
        # requires a pretrained backbone; sampled for completeness, unused
        "unfrozen_base_layers": Prior(0.0, 16.0, "uniform"),
    }
    if include_margin:
        space["margin"] = Prior(0.1, 10.0, "log-uniform")
    return space


def sample_config(space, rng):
    return {name: prior.sample(rng) for name, prior in space.items()}


def apply_sample(config: ExperimentConfig, sample: dict) -> ExperimentConfig:
    """Fold a sampled hyperparameter dict into an experiment config."""
    optimizer = dict(config.optimizer)
    optimizer["lr"] = sample["learning_rate"]
    optimizer["decay"] = sample["learning_rate_decay"]
    optimizer["momentum"] = sample["momentum"]
    optimizer["l2"] = sample["l2_regularization"]
    r = sample["da_ce_loss_ratio"]
    s = sample["st_ce_loss_ratio"]
    weights = dc_replace(
        config.weights,
        beta=(1.0 - r) * s,
        gamma=(1.0 - r) * (1.0 - s),
        margin=sample.get("margin", config.weights.margin),
    )
    net_spec = json.loads(json.dumps(config.network_spec))
    for layer in net_spec.get("features", []):
        if layer.get("type") == "dropout":
            layer["keep_prob"] = 1.0 - sample["dropout"]
    return dc_replace(config, optimizer=optimizer, weights=weights,
                      da_weight=r, network_spec=net_spec)


def random_search(config: ExperimentConfig, space=None, budget=20, seed=0,
                  leaderboard_path=None):
    """Train `budget` sampled configurations and rank them.

    Each trial reuses the experiment config with one repeat and scores by
    mean test-split accuracy of `run_experiment`. Returns (best_entry,
    leaderboard) with the leaderboard sorted by descending accuracy.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if space is None:
        space = default_search_space(include_margin=config.method == "ccsa")
    rng = np.random.default_rng(seed)
    samples = [sample_config(space, rng) for _ in range(budget)]
    leaderboard = []
    for trial, sample in enumerate(samples):
        trial_config = apply_sample(config, sample)
        entry = {"trial": trial, "sample": sample}
        try:
            result = run_experiment(trial_config)
            # rank by held-out validation accuracy where a validation split
            # exists; the test figure is kept for reporting only
            entry["accuracy"] = (result["mean_val_accuracy"]
                                 if result["mean_val_accuracy"] is not None
                                 else result["mean_accuracy"])
            entry["test_accuracy"] = result["mean_accuracy"]
        except (RuntimeError, ValueError) as exc:
            entry["accuracy"] = None
            entry["error"] = str(exc)
        leaderboard.append(entry)
    scored = [e for e in leaderboard if e["accuracy"] is not None]
    if not scored:
        raise RuntimeError("all search trials failed")
    leaderboard.sort(key=lambda e: (e["accuracy"] is None, -(e["accuracy"] or 0.0)))
    if leaderboard_path is not None:
        with open(leaderboard_path, "w") as f:
            for entry in leaderboard:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    return leaderboard[0], leaderboard
