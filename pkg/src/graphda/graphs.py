"""Intrinsic/penalty graph construction over two-domain labeled batches.

The graphs connect samples across domains: the intrinsic graph links
same-class pairs (compactness), the penalty graph links different-class
pairs (separability). Both are dense, binary, symmetric N x N matrices
with zero diagonal, where N is the mini-batch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class DomainTag(IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass(frozen=True)
class BatchMeta:
    """Class labels and domain tags for one mini-batch.

    labels : int array of shape (N,), values in [0, K)
    domains : int array of shape (N,), values in {SOURCE, TARGET}
    """

    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        domains = np.asarray(self.domains, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "domains", domains)
        if labels.ndim != 1 or domains.ndim != 1:
            raise ValueError("labels and domains must be 1-D")
        if labels.shape != domains.shape:
            raise ValueError(
                f"labels ({labels.shape}) and domains ({domains.shape}) differ in length"
            )
        if labels.size < 2:
            raise ValueError("a batch needs at least 2 samples")
        if np.any(labels < 0):
            raise ValueError("labels must be nonnegative class ids")
        if not np.all(np.isin(domains, (DomainTag.SOURCE, DomainTag.TARGET))):
            raise ValueError("domains must be DomainTag values")

    def __len__(self):
        return self.labels.size


def intrinsic_weights(meta: BatchMeta, include_within_domain: bool = False) -> np.ndarray:
    """Binary weights for same-class pairs.

    By default only cross-domain edges are kept; `include_within_domain`
    re-enables same-class edges inside a single domain (ablation knob).
    """
    same_class = meta.labels[:, None] == meta.labels[None, :]
    cross_domain = meta.domains[:, None] != meta.domains[None, :]
    w = same_class if include_within_domain else same_class & cross_domain
    w = w.astype(np.float64)
    np.fill_diagonal(w, 0.0)
    return w


def penalty_weights(meta: BatchMeta) -> np.ndarray:
    """Binary weights for cross-domain different-class pairs."""
    diff_class = meta.labels[:, None] != meta.labels[None, :]
    cross_domain = meta.domains[:, None] != meta.domains[None, :]
    w = (diff_class & cross_domain).astype(np.float64)
    np.fill_diagonal(w, 0.0)
    return w


def degree(w: np.ndarray) -> np.ndarray:
    """Diagonal degree matrix of a weight matrix (off-diagonal row sums)."""
    w = np.asarray(w, dtype=np.float64)
    d = w.sum(axis=1) - np.diag(w)
    return np.diag(d)


def laplacian(w: np.ndarray) -> np.ndarray:
    """Combinatorial graph Laplacian D - W."""
    return degree(w) - np.asarray(w, dtype=np.float64)


def pairwise_quadratic(phi: np.ndarray, w: np.ndarray) -> float:
    """Sum over all ordered pairs of ||phi_i - phi_j||^2 * W_ij.

    phi has one column per sample. Equals 2 * Tr(phi L phi^T) for the
    Laplacian L of W; computed here directly from pairwise distances so
    it can serve as an independent check of the trace form.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    if phi.shape[1] != w.shape[0] or w.shape[0] != w.shape[1]:
        raise ValueError(f"phi has {phi.shape[1]} columns but W is {w.shape}")
    diff = phi[:, :, None] - phi[:, None, :]
    sq = np.einsum("dij,dij->ij", diff, diff)
    return float(np.sum(sq * w))
