"""Independent reference implementations used only by the tests.

These deliberately take the slow, explicit route: dense Kronecker matrices,
a proximal-gradient solver and per-entry least squares.
"""
from functools import reduce

import numpy as np


def kron_chain(sigmas):
    """``Sigma_M kron ... kron Sigma_1`` as a dense matrix."""
    return reduce(np.kron, list(sigmas)[::-1])


def random_spd(p, rng, ridge=0.5):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + ridge * np.eye(p)


def dense_objective(beta, S, delta, lam):
    quad = np.einsum("kj,jl,kl->", beta, S, beta) - 2 * np.sum(delta * beta)
    return quad + 2 * lam * np.linalg.norm(beta, axis=0).sum()


def dense_group_lasso(S, delta, lam, iters=200_000, tol=1e-14):
    """Accelerated proximal gradient on the explicit quadratic.

    Minimizes ``sum_k b_k' S b_k - 2 d_k' b_k + 2 lam sum_j ||b_.j||``.
    """
    delta = np.atleast_2d(delta)
    L = 2 * np.linalg.eigvalsh(S)[-1]
    step = 1.0 / L
    x = np.zeros_like(delta)
    y = x.copy()
    t = 1.0
    for _ in range(iters):
        g = 2 * (y @ S - delta)
        z = y - step * g
        norms = np.linalg.norm(z, axis=0)
        shrink = np.where(norms > 2 * lam * step, 1 - 2 * lam * step / np.maximum(norms, 1e-300), 0.0)
        x_new = z * shrink
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        # restart momentum when it stops helping
        if np.sum((y - x_new) * (x_new - x)) > 0:
            y = x_new.copy()
            t_new = 1.0
        x, t = x_new, t_new
    return x


def per_entry_ols(X, U, Y, K):
    """Covariate effect for every tensor entry by separate least-squares fits.

    Each entry is regressed on U plus one indicator per class, so the slope on
    U is the pooled within-class coefficient.
    """
    X = np.asarray(X, dtype=np.float64)
    shape = X.shape[:-1]
    n = X.shape[-1]
    U = np.asarray(U, dtype=np.float64).reshape(n, -1)
    q = U.shape[1]
    D = np.zeros((n, K))
    D[np.arange(n), np.asarray(Y) - 1] = 1.0
    design = np.hstack([U, D])
    out = np.empty(shape + (q,))
    for idx in np.ndindex(*shape):
        coef, *_ = np.linalg.lstsq(design, X[idx], rcond=None)
        out[idx] = coef[:q]
    return out


def brute_multi_index(j, shape):
    """1-based multi-index of vec position ``j`` by enumerating positions."""
    count = 0
    for idx in np.ndindex(*shape[::-1]):
        count += 1
        if count == j:
            return tuple(i + 1 for i in idx[::-1])
    raise IndexError(j)
