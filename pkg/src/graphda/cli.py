"""Command-line entry point.

Verbs: gradcheck, oracle, train, eval, search. Configuration is a JSON
document (see README for the schema); metrics are emitted as JSONL.
Exit codes: 0 success/pass, 1 validation failure, 2 configuration error.
The GRAPHDA_DATA environment variable points at the dataset root used to
resolve relative dataset paths.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import checks, data as data_mod, network, spectral
from .graphs import BatchMeta, DomainTag, intrinsic_weights, laplacian, penalty_weights
from .search import default_search_space, random_search
from .train import ConfigError, ExperimentConfig, evaluate, jsonl_sink, run_experiment

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _load_config(path):
    try:
        config = ExperimentConfig.from_json(path)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    root = os.environ.get("GRAPHDA_DATA")
    if root and config.dataset.get("kind") == "digits":
        for key in ("source_images", "source_labels", "target_images", "target_labels"):
            value = config.dataset.get(key)
            if value and not os.path.isabs(value):
                config.dataset[key] = os.path.join(root, value)
    return config


@click.group()
def main():
    """Graph-embedding domain adaptation toolkit."""


@main.command()
@click.option("--seed", default=0, show_default=True)
def gradcheck(seed):
    """Compare analytic gradients against central finite differences."""
    report = checks.full_report(seed=seed)
    ok = True
    for name, err in report.items():
        tol = checks.TOLERANCES[name]
        passed = err < tol
        ok &= passed
        click.echo(f"{name}: max relative error {err:.3e} "
                   f"(tolerance {tol:.0e}) {'PASS' if passed else 'FAIL'}")
    sys.exit(EXIT_OK if ok else EXIT_FAIL)


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--dim", default=5, show_default=True, help="feature dimension")
@click.option("--samples", default=20, show_default=True, help="samples per domain")
@click.option("--tolerance", default=1e-3, show_default=True)
def oracle(seed, dim, samples, tolerance):
    """Gradient descent on the linear trace-ratio loss vs the spectral optimum."""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([rng.integers(0, 2, size=samples),
                             rng.integers(0, 2, size=samples)])
    labels[:2] = [0, 1]
    labels[samples:samples + 2] = [0, 1]
    domains = np.concatenate([np.zeros(samples, dtype=int), np.ones(samples, dtype=int)])
    meta = BatchMeta(labels, domains)
    x = rng.standard_normal((dim, 2 * samples))
    lap = laplacian(intrinsic_weights(meta))
    pen = laplacian(penalty_weights(meta))
    epsilon = 1e-6
    rho, _ = spectral.trace_ratio_linear(x, lap, pen, epsilon, dim=1)
    descended, _ = spectral.linear_probe_descent(x, lap, pen, epsilon, seed=seed)
    gap = abs(descended - rho) / max(abs(rho), 1e-12)
    click.echo(f"spectral optimum: {rho:.10f}")
    click.echo(f"gradient descent: {descended:.10f}")
    click.echo(f"relative gap: {gap:.3e} ({'PASS' if gap < tolerance else 'FAIL'})")
    sys.exit(EXIT_OK if gap < tolerance else EXIT_FAIL)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def train(config_path, out_dir):
    """Train per the config; write JSONL metrics and final checkpoints."""
    config = _load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    sink = jsonl_sink(os.path.join(out_dir, "metrics.jsonl"))
    try:
        result = run_experiment(config, out_dir=out_dir, metrics_sink=sink)
    except RuntimeError as exc:
        click.echo(f"training failed: {exc}", err=True)
        sys.exit(EXIT_FAIL)
    finally:
        sink.close()
    click.echo(json.dumps(result, sort_keys=True))
    click.echo(f"target accuracy: {result['mean_accuracy']:.4f} "
               f"± {result['std_accuracy']:.4f} over {len(result['accuracies'])} run(s)")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--images", required=True, type=click.Path(exists=True))
@click.option("--labels", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def eval_cmd(checkpoint, images, labels, out_path):
    """Accuracy and confusion matrix of a checkpoint on an IDX dataset."""
    net = network.load_checkpoint(checkpoint)
    hw = net.spec["input_shape"][-1]
    try:
        dataset = data_mod.load_digit_dataset(
            images, labels, DomainTag.TARGET, "eval",
            num_classes=net.classes, target_hw=hw)
    except ValueError as exc:
        click.echo(f"dataset error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    accuracy, confusion = evaluate(net, dataset)
    report = {"accuracy": accuracy, "confusion": confusion.tolist()}
    click.echo(json.dumps(report, sort_keys=True))
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report, f, sort_keys=True)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--budget", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def search(config_path, budget, seed, out_path):
    """Random hyperparameter search; emits a JSONL leaderboard."""
    config = _load_config(config_path)
    space = default_search_space(include_margin=config.method == "ccsa")
    try:
        best, _ = random_search(config, space, budget=budget, seed=seed,
                                leaderboard_path=out_path)
    except RuntimeError as exc:
        click.echo(f"search failed: {exc}", err=True)
        sys.exit(EXIT_FAIL)
    click.echo(json.dumps(best, sort_keys=True))


if __name__ == "__main__":
    main()
