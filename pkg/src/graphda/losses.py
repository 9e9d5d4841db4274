"""Domain-adaptation losses over embedding batches.

Provides the trace-ratio graph-embedding loss with its analytic gradient,
the contrastive alignment (CSA) loss and its graph-form rewrite, the
stochastic-neighbourhood (d-SNE) loss, categorical cross-entropy, and the
joint training objective.

Embeddings are d x N matrices with one column per sample; source columns
precede target columns when a combined batch is used.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graphs import pairwise_quadratic

DEFAULT_EPSILON = 1e-6
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the joint objective and loss hyperparameters."""

    beta: float = 0.5
    gamma: float = 0.5
    epsilon: float = DEFAULT_EPSILON
    margin: float = 1.0

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("cross-entropy weights must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")


def _check_phi(phi, n):
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    if phi.shape[1] != n:
        raise ValueError(f"embedding has {phi.shape[1]} columns, expected {n}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("embedding contains non-finite entries")
    return phi


def trace_ratio_loss(phi, intrinsic_lap, penalty_lap, epsilon=DEFAULT_EPSILON):
    """Tr(phi L phi^T) / (Tr(phi B phi^T) + epsilon).

    L is the intrinsic-graph Laplacian, B the penalty-graph Laplacian.
    epsilon > 0 keeps the ratio finite for degenerate batches whose
    penalty graph is empty.
    """
    n = intrinsic_lap.shape[0]
    phi = _check_phi(phi, n)
    num = float(np.einsum("di,ij,dj->", phi, intrinsic_lap, phi))
    den = float(np.einsum("di,ij,dj->", phi, penalty_lap, phi)) + epsilon
    return num / den


def trace_ratio_grad(phi, intrinsic_lap, penalty_lap, epsilon=DEFAULT_EPSILON):
    """Gradient of `trace_ratio_loss` with respect to every entry of phi.

    Quotient rule on the two quadratic traces:
    [phi (L + L^T) * den - num * phi (B + B^T)] / den^2.
    """
    n = intrinsic_lap.shape[0]
    phi = _check_phi(phi, n)
    # float64 throughout so overflow degrades to inf/nan instead of raising;
    # the optimizer rejects non-finite gradients
    num = np.einsum("di,ij,dj->", phi, intrinsic_lap, phi)
    den = np.einsum("di,ij,dj->", phi, penalty_lap, phi) + np.float64(epsilon)
    d_num = phi @ (intrinsic_lap + intrinsic_lap.T)
    d_den = phi @ (penalty_lap + penalty_lap.T)
    with np.errstate(over="ignore", invalid="ignore"):
        return (d_num * den - num * d_den) / den**2


def _cross_distances(phi_s, phi_t):
    diff = phi_s[:, :, None] - phi_t[:, None, :]
    sq = np.einsum("dij,dij->ij", diff, diff)
    return np.sqrt(np.maximum(sq, 0.0)), sq


def contrastive_loss(phi_s, phi_t, labels_s, labels_t, margin=1.0,
                     squared_distance=False):
    """Contrastive semantic-alignment loss over all source-target pairs.

    Same-class pairs contribute 0.5 * d^2, different-class pairs
    0.5 * max(0, margin - d)^2, summed over the Cartesian product of the
    two batches. d is the Euclidean embedding distance, or the squared
    distance when `squared_distance` is set.
    """
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    if labels_s.size == 0 or labels_t.size == 0:
        raise ValueError("contrastive loss needs non-empty source and target batches")
    phi_s = _check_phi(phi_s, labels_s.size)
    phi_t = _check_phi(phi_t, labels_t.size)
    dist, sq = _cross_distances(phi_s, phi_t)
    d = sq if squared_distance else dist
    same = labels_s[:, None] == labels_t[None, :]
    attract = 0.5 * d**2
    repel = 0.5 * np.maximum(0.0, margin - d) ** 2
    return float(np.sum(np.where(same, attract, repel)))


def contrastive_grad(phi_s, phi_t, labels_s, labels_t, margin=1.0):
    """Gradient of `contrastive_loss` (Euclidean distance form) wrt both batches."""
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    phi_s = _check_phi(phi_s, labels_s.size)
    phi_t = _check_phi(phi_t, labels_t.size)
    dist, _ = _cross_distances(phi_s, phi_t)
    same = labels_s[:, None] == labels_t[None, :]
    # same-class pair: coefficient on (phi_s_i - phi_t_j) is 1
    # hinge-active pair: -(margin - d)/d; flat at d = 0 (subgradient 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        hinge = np.where((dist < margin) & (dist > 0.0),
                         -(margin - dist) / dist, 0.0)
    coef = np.where(same, 1.0, hinge)
    diff = phi_s[:, :, None] - phi_t[:, None, :]
    grad_s = np.einsum("ij,dij->di", coef, diff)
    grad_t = -np.einsum("ij,dij->dj", coef, diff)
    return grad_s, grad_t


def contrastive_as_graph(phi_s, phi_t, labels_s, labels_t, margin=1.0):
    """Rewrite the contrastive loss as a pair of graph quadratic forms.

    Returns (W, W_p, constant) over the combined batch [source | target]
    such that

        0.5 * (pairwise_quadratic(phi, W) - pairwise_quadratic(phi, W_p))
        + constant

    equals `contrastive_loss` exactly. W carries weight 1/2 on
    cross-domain same-class pairs; W_p carries weight 1/2 on cross-domain
    different-class pairs inside the margin; the hinge terms that are not
    quadratic in the pairwise differences go into the explicit constant.
    """
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    phi_s = _check_phi(phi_s, labels_s.size)
    phi_t = _check_phi(phi_t, labels_t.size)
    ns, nt = labels_s.size, labels_t.size
    n = ns + nt
    dist, sq = _cross_distances(phi_s, phi_t)
    same = labels_s[:, None] == labels_t[None, :]
    active = (~same) & (dist < margin)

    w_cross = 0.5 * same.astype(np.float64)
    wp_cross = 0.5 * active.astype(np.float64)
    w = np.zeros((n, n))
    wp = np.zeros((n, n))
    w[:ns, ns:] = w_cross
    w[ns:, :ns] = w_cross.T
    wp[:ns, ns:] = wp_cross
    wp[ns:, :ns] = wp_cross.T

    # 0.5*(m - d)^2 = -0.5*d^2 + (0.5*m^2 - m*d + d^2); the second group
    # cannot be expressed as a pairwise quadratic and stays explicit.
    constant = float(np.sum((0.5 * margin**2 - margin * dist + sq)[active]))
    return w, wp, constant


def contrastive_from_graph(phi, w, wp, constant):
    """Evaluate the graph-form contrastive loss produced by `contrastive_as_graph`."""
    return 0.5 * (pairwise_quadratic(phi, w) - pairwise_quadratic(phi, wp)) + constant


def neighbourhood_loss(phi_s, phi_t, labels_s, labels_t, squared_distance=True):
    """d-SNE-style loss: per target sample, the largest same-class source
    distance minus the smallest different-class source distance.

    Squared Euclidean distances by default. Target samples lacking a
    same-class or different-class source sample are skipped with a warning.
    """
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    phi_s = _check_phi(phi_s, labels_s.size)
    phi_t = _check_phi(phi_t, labels_t.size)
    dist, sq = _cross_distances(phi_s, phi_t)
    d = sq if squared_distance else dist
    total = 0.0
    skipped = 0
    for j in range(labels_t.size):
        same = labels_s == labels_t[j]
        if not same.any() or same.all():
            skipped += 1
            continue
        total += float(d[same, j].max() - d[~same, j].min())
    if skipped:
        warnings.warn(
            f"neighbourhood_loss: skipped {skipped} target sample(s) without "
            "both a same-class and a different-class source sample",
            stacklevel=2,
        )
    return total


def neighbourhood_grad(phi_s, phi_t, labels_s, labels_t):
    """Gradient of `neighbourhood_loss` (squared-distance form)."""
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    phi_s = _check_phi(phi_s, labels_s.size)
    phi_t = _check_phi(phi_t, labels_t.size)
    _, sq = _cross_distances(phi_s, phi_t)
    grad_s = np.zeros_like(phi_s)
    grad_t = np.zeros_like(phi_t)
    for j in range(labels_t.size):
        same = labels_s == labels_t[j]
        if not same.any() or same.all():
            continue
        same_idx = np.flatnonzero(same)
        diff_idx = np.flatnonzero(~same)
        i_max = same_idx[np.argmax(sq[same_idx, j])]
        i_min = diff_idx[np.argmin(sq[diff_idx, j])]
        u_max = phi_s[:, i_max] - phi_t[:, j]
        u_min = phi_s[:, i_min] - phi_t[:, j]
        grad_s[:, i_max] += 2.0 * u_max
        grad_t[:, j] -= 2.0 * u_max
        grad_s[:, i_min] -= 2.0 * u_min
        grad_t[:, j] += 2.0 * u_min
    return grad_s, grad_t


def cross_entropy(y_true, y_pred):
    """Categorical cross-entropy, summed over samples.

    y_true is one-hot (M x K); y_pred rows are probabilities, clamped to
    [1e-12, 1] before the log.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    clamped = np.clip(y_pred, PROB_FLOOR, 1.0)
    return float(-np.sum(y_true * np.log(clamped)))


def total_objective(da_loss, ce_source, ce_target, weights: LossWeights,
                    da_weight=1.0):
    """Joint objective: da_weight * L_DA + beta * L_CE^S + gamma * L_CE^T."""
    return da_weight * da_loss + weights.beta * ce_source + weights.gamma * ce_target
