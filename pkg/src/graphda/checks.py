"""Finite-difference verification of the analytic gradients.

Used both by the test suite and the `gradcheck` CLI command. All checks
run in double precision with central differences.
"""

from __future__ import annotations

import numpy as np

from . import losses, network
from .graphs import BatchMeta, DomainTag, intrinsic_weights, laplacian, penalty_weights
from .train import siamese_grads


def finite_diff(f, x, step=1e-6):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f(x)
        xf[i] = orig - step
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(analytic, numeric):
    denom = max(np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(np.asarray(analytic) - np.asarray(numeric)) / denom)


def _random_batch_meta(rng, n, num_classes=3):
    # guarantee at least one sample per domain and two classes
    while True:
        labels = rng.integers(0, num_classes, size=n)
        domains = rng.integers(0, 2, size=n)
        if np.unique(labels).size >= 2 and np.unique(domains).size == 2:
            return BatchMeta(labels, domains)


def check_trace_ratio_grad(trials=100, seed=0, step=1e-6):
    """Max relative error of the trace-ratio gradient over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 9))
        n = int(rng.integers(4, 17))
        meta = _random_batch_meta(rng, n)
        lap = laplacian(intrinsic_weights(meta))
        pen = laplacian(penalty_weights(meta))
        phi = rng.standard_normal((d, n))
        eps = 1e-6
        analytic = losses.trace_ratio_grad(phi, lap, pen, eps)
        numeric = finite_diff(
            lambda p: losses.trace_ratio_loss(p, lap, pen, eps), phi, step)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def check_contrastive_grad(trials=50, seed=0, step=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 6))
        ns = int(rng.integers(2, 8))
        nt = int(rng.integers(2, 8))
        ys = rng.integers(0, 3, size=ns)
        yt = rng.integers(0, 3, size=nt)
        phi_s = rng.standard_normal((d, ns))
        phi_t = rng.standard_normal((d, nt))
        margin = 1.0
        gs, gt = losses.contrastive_grad(phi_s, phi_t, ys, yt, margin)
        num_s = finite_diff(
            lambda p: losses.contrastive_loss(p, phi_t, ys, yt, margin), phi_s, step)
        num_t = finite_diff(
            lambda p: losses.contrastive_loss(phi_s, p, ys, yt, margin), phi_t, step)
        worst = max(worst, rel_error(np.concatenate([gs.ravel(), gt.ravel()]),
                                     np.concatenate([num_s.ravel(), num_t.ravel()])))
    return worst


def check_neighbourhood_grad(trials=50, seed=0, step=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 6))
        nt = int(rng.integers(1, 6))
        # two source samples per class so every target sample has both a
        # same-class and a different-class source
        ys = np.repeat(np.arange(3), 2)
        yt = rng.integers(0, 3, size=nt)
        phi_s = rng.standard_normal((d, ys.size))
        phi_t = rng.standard_normal((d, nt))
        gs, gt = losses.neighbourhood_grad(phi_s, phi_t, ys, yt)
        num_s = finite_diff(
            lambda p: losses.neighbourhood_loss(p, phi_t, ys, yt), phi_s, step)
        num_t = finite_diff(
            lambda p: losses.neighbourhood_loss(phi_s, p, ys, yt), phi_t, step)
        worst = max(worst, rel_error(np.concatenate([gs.ravel(), gt.ravel()]),
                                     np.concatenate([num_s.ravel(), num_t.ravel()])))
    return worst


def check_network_grad(seed=0, method="dage-lda", step=1e-6, conv=False):
    """Relative error between analytic parameter gradients of the joint
    objective and central finite differences on a tiny network."""
    rng = np.random.default_rng(seed)
    if conv:
        spec = {
            "input_shape": [1, 8, 8],
            "features": [
                {"type": "conv", "kernel": 3, "filters": 2},
                {"type": "relu"},
                {"type": "maxpool", "window": 2},
                {"type": "flatten"},
                {"type": "dense", "units": 5},
            ],
            "classes": 3,
        }
        xs = rng.standard_normal((4, 1, 8, 8))
        xt = rng.standard_normal((4, 1, 8, 8))
    else:
        spec = network.mlp_spec(4, [6, 5], 3)
        xs = rng.standard_normal((5, 4))
        xt = rng.standard_normal((4, 4))
    ys = rng.integers(0, 3, size=xs.shape[0])
    yt = rng.integers(0, 3, size=xt.shape[0])
    # ensure both label sets span two classes
    ys[0], ys[1] = 0, 1
    yt[0], yt[1] = 1, 2
    net = network.Network(spec, seed=seed)
    weights = losses.LossWeights(beta=0.4, gamma=0.7)

    _, analytic = siamese_grads(net, method, xs, ys, xt, yt, weights, 1.0,
                                training=False)
    params = net.parameters()

    def objective():
        comp, _ = siamese_grads(net, method, xs, ys, xt, yt, weights, 1.0,
                                training=False)
        return comp["total"]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.ravel()
        gflat = np.asarray(g).ravel()
        numeric = np.zeros_like(gflat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = objective()
            flat[i] = orig - step
            lo = objective()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * step)
        worst = max(worst, rel_error(gflat, numeric))
    return worst


def full_report(seed=0):
    """All gradient checks; returns {component: max relative error}."""
    return {
        "trace_ratio": check_trace_ratio_grad(seed=seed),
        "contrastive": check_contrastive_grad(seed=seed),
        "neighbourhood": check_neighbourhood_grad(seed=seed),
        "network_mlp": check_network_grad(seed=seed),
        "network_conv": check_network_grad(seed=seed, conv=True),
    }


TOLERANCES = {
    "trace_ratio": 1e-5,
    "contrastive": 1e-5,
    "neighbourhood": 1e-5,
    "network_mlp": 1e-4,
    "network_conv": 1e-4,
}
