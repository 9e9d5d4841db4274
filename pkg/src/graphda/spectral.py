"""Closed-form solver for the linear graph-embedding problem.

For a linear embedding phi(x) = v^T x the trace-ratio objective reduces to
a Rayleigh quotient of the scatter pencil (A, C) with A = X L X^T and
C = X B X^T + eps*I. Solving the symmetric-definite generalized
eigenproblem gives the exact optimum, which serves as an independent
oracle for gradient-based training of the same loss.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .losses import trace_ratio_grad, trace_ratio_loss


def scatter_matrices(x, intrinsic_lap, penalty_lap, epsilon):
    """Scatter pencil (A, C) = (X L X^T, X B X^T + eps*I), symmetrized."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("data matrix must be D x N")
    if x.shape[1] != intrinsic_lap.shape[0] or x.shape[1] != penalty_lap.shape[0]:
        raise ValueError("Laplacian size does not match the number of samples")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    a = x @ intrinsic_lap @ x.T
    c = x @ penalty_lap @ x.T + epsilon * np.eye(x.shape[0])
    return 0.5 * (a + a.T), 0.5 * (c + c.T)


def jacobi_eigh(s, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted ascending, with eigenvectors
    in columns. Adequate for the small dense matrices used here (D <= 64).
    """
    a = np.array(s, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a) + tol
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t**2 + 1.0)
                sn = t * c
                rot_p = c * a[:, p] - sn * a[:, q]
                rot_q = sn * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - sn * a[q, :]
                rot_q = sn * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - sn * v[:, q]
                rot_q = sn * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    evals = np.diag(a).copy()
    order = np.argsort(evals)
    return evals[order], v[:, order]


def smallest_generalized_eigenpair(a, c):
    """Smallest eigenpair of A v = lambda C v for a symmetric pencil, C PD.

    Reduces to a standard symmetric problem via the Cholesky factor
    C = G G^T, solves it with Jacobi iteration, and back-substitutes.
    The returned vector has unit Euclidean norm.
    """
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    try:
        g = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise ValueError("constraint matrix is not positive definite") from exc
    # M = G^-1 A G^-T shares eigenvalues with the pencil
    y = solve_triangular(g, a, lower=True)
    m = solve_triangular(g, y.T, lower=True).T
    m = 0.5 * (m + m.T)
    evals, evecs = jacobi_eigh(m)
    lam = float(evals[0])
    v = solve_triangular(g.T, evecs[:, 0], lower=False)
    v /= np.linalg.norm(v)
    return lam, v


def trace_ratio_linear(x, intrinsic_lap, penalty_lap, epsilon, dim=1,
                       max_iter=500, tol=1e-10):
    """Optimal linear projection minimizing Tr(V^T A V) / Tr(V^T C V).

    dim = 1 is the generalized eigenvector. For dim > 1 the equivalent
    trace-difference iteration is run: take the `dim` smallest
    eigenvectors of A - rho*C, update rho, repeat until rho stabilizes.
    Returns (rho, V) with V of shape D x dim, orthonormal columns.
    """
    a, c = scatter_matrices(x, intrinsic_lap, penalty_lap, epsilon)
    d = a.shape[0]
    if not 1 <= dim <= d:
        raise ValueError(f"dim must be in [1, {d}]")
    if dim == 1:
        lam, v = smallest_generalized_eigenpair(a, c)
        return lam, v[:, None]

    # starting from the ratio at a feasible V keeps the sequence monotone
    # non-increasing: the next V makes tr(V^T (A - rho C) V) <= 0
    _, evecs = jacobi_eigh(a)
    v = evecs[:, :dim]
    rho = float(np.trace(v.T @ a @ v) / np.trace(v.T @ c @ v))
    for _ in range(max_iter):
        _, evecs = jacobi_eigh(a - rho * c)
        v = evecs[:, :dim]
        new_rho = float(np.trace(v.T @ a @ v) / np.trace(v.T @ c @ v))
        if abs(new_rho - rho) < tol:
            return new_rho, v
        rho = new_rho
    raise RuntimeError(f"trace-difference iteration did not converge in {max_iter} steps")


def linear_probe_descent(x, intrinsic_lap, penalty_lap, epsilon, seed=0,
                         max_steps=5000, lr=0.1, tol=1e-12):
    """Minimize the trace-ratio loss of a linear embedding by gradient descent.

    The projection vector is renormalized to unit length after every step;
    without the constraint the epsilon-regularized ratio is minimized by
    shrinking the embedding scale toward zero. On the unit sphere the
    objective is exactly the Rayleigh quotient of the scatter pencil, so
    the result is directly comparable to `smallest_generalized_eigenpair`.

    Returns (loss, v). Uses the same loss/gradient code path as network
    training, keeping this an end-to-end check of that path.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape[0])
    v /= np.linalg.norm(v)

    def loss_of(vec):
        return trace_ratio_loss(vec @ x, intrinsic_lap, penalty_lap, epsilon)

    current = loss_of(v)
    step = lr
    for _ in range(max_steps):
        g_phi = trace_ratio_grad(v @ x, intrinsic_lap, penalty_lap, epsilon)
        g = x @ g_phi[0]
        # remove the radial component; the constraint absorbs it
        g -= (g @ v) * v
        gnorm = np.linalg.norm(g)
        if gnorm < tol:
            break
        while step > 1e-16:
            cand = v - step * g
            cand /= np.linalg.norm(cand)
            cand_loss = loss_of(cand)
            if cand_loss < current:
                v, current = cand, cand_loss
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    return current, v
