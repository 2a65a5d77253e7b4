"""Closed-form estimators for every model parameter except the sparse
discriminant tensors.

Conventions: a stacked tensor sample ``X`` has shape ``(p_1, ..., p_M, n)``;
covariates ``U`` have shape ``(n, q)``; labels ``Y`` are integers in
``1..K``.  Per-class quantities are stacked along a leading axis of length K.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import prod
from typing import Optional, Sequence

import numpy as np

from .tensor import mode_matricize

logger = logging.getLogger(__name__)

__all__ = [
    "LabeledDataset",
    "CovariateBlock",
    "CatchModel",
    "SingularMatrixError",
    "EmptyClassError",
    "estimate_priors",
    "estimate_covariate_block",
    "estimate_alpha",
    "estimate_mu",
    "residuals",
    "pooled_reference_variance",
    "estimate_sigmas",
    "check_pd_condition",
    "perturb_sigma",
    "apply_pd_policy",
    "estimate_parameters",
]

DEFAULT_PD_GAMMA = 1e-4


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"{name} is singular"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EmptyClassError(ValueError):
    """Some class label in 1..K has no observations."""

    def __init__(self, label: int):
        self.label = label
        super().__init__(f"class {label} has no observations")


def _check_labels(Y, K: int | None = None) -> tuple[np.ndarray, int]:
    Y = np.asarray(Y)
    if Y.ndim != 1:
        raise ValueError("labels must be a 1-d vector")
    if not np.issubdtype(Y.dtype, np.integer):
        if not np.all(np.equal(np.mod(Y, 1), 0)):
            raise ValueError("labels must be integers")
        Y = Y.astype(np.int64)
    if Y.size and Y.min() < 1:
        raise ValueError("labels must be in 1..K")
    if K is None:
        K = int(Y.max()) if Y.size else 0
    elif Y.size and Y.max() > K:
        raise ValueError(f"label {int(Y.max())} exceeds K={K}")
    counts = np.bincount(Y, minlength=K + 1)[1:]
    for k, c in enumerate(counts, start=1):
        if c == 0:
            raise EmptyClassError(k)
    return Y.astype(np.int64), K


def _one_hot(Y: np.ndarray, K: int) -> np.ndarray:
    Z = np.zeros((Y.size, K))
    Z[np.arange(Y.size), Y - 1] = 1.0
    return Z


def _flat(X: np.ndarray) -> np.ndarray:
    """View a stacked sample ``(p_1..p_M, n)`` as a ``(p, n)`` matrix in vec order."""
    n = X.shape[-1]
    return X.reshape(-1, n, order="F")


@dataclass
class LabeledDataset:
    """n observations of a tensor, optional covariates and a class label."""

    X: np.ndarray
    Y: np.ndarray
    U: Optional[np.ndarray] = None
    K: Optional[int] = None

    def __post_init__(self):
        self.X = np.asfortranarray(np.asarray(self.X, dtype=np.float64))
        if self.X.ndim < 2:
            raise ValueError("X must stack observations along its last mode")
        self.Y, self.K = _check_labels(self.Y, self.K)
        n = self.X.shape[-1]
        if self.Y.size != n:
            raise ValueError(f"X holds {n} observations but Y has {self.Y.size} labels")
        if self.U is not None:
            U = np.asarray(self.U, dtype=np.float64)
            if U.ndim == 1:
                U = U[:, None]
            if U.shape[0] != n:
                raise ValueError(f"X holds {n} observations but U has {U.shape[0]} rows")
            self.U = U

    @property
    def n(self) -> int:
        return self.X.shape[-1]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.X.shape[:-1]

    @property
    def q(self) -> int:
        return 0 if self.U is None else self.U.shape[1]

    def check_estimable(self):
        """Sample-size requirements of the estimators (n >= K + 1, q < n)."""
        if self.n < self.K + 1:
            raise ValueError(f"need n >= K + 1 observations, got n={self.n}, K={self.K}")
        if self.U is not None and self.q >= self.n:
            raise ValueError(f"covariate dimension q={self.q} must be below n={self.n}")

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            X=self.X[..., idx],
            Y=self.Y[idx],
            U=None if self.U is None else self.U[idx],
            K=self.K,
        )

    def without_covariates(self) -> "LabeledDataset":
        return replace(self, U=None)


@dataclass
class CovariateBlock:
    phi: np.ndarray  # (K, q) class means
    psi: np.ndarray  # (q, q) pooled within-class covariance
    gamma: np.ndarray  # (K, q), gamma[0] == 0


@dataclass
class CatchModel:
    """All fitted parameters of the classifier.

    ``mu`` is stacked ``(K, p_1, ..., p_M)`` and ``B`` is ``(K - 1, p_1, ..., p_M)``
    for classes 2..K.  ``intercepts`` holds ``a_1..a_K`` with ``a_1 = 0``.
    """

    priors: np.ndarray
    mu: np.ndarray
    sigmas: list
    B: np.ndarray
    covariates: Optional[CovariateBlock] = None
    alpha: Optional[np.ndarray] = None
    intercepts: Optional[np.ndarray] = None
    lam: Optional[float] = None
    perturbed_modes: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.priors.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape[1:]

    @property
    def has_covariates(self) -> bool:
        return self.covariates is not None

    def selected(self) -> np.ndarray:
        """1-based vec positions where some class contrast is nonzero."""
        flat = np.stack([b.ravel(order="F") for b in self.B])
        return np.flatnonzero(np.any(flat != 0, axis=0)) + 1


def estimate_priors(Y, K: int | None = None) -> np.ndarray:
    """Class proportions ``n_k / n``."""
    Y, K = _check_labels(Y, K)
    return np.bincount(Y, minlength=K + 1)[1:] / Y.size


def _class_means(mat: np.ndarray, Y: np.ndarray, K: int) -> np.ndarray:
    """Column means of ``mat`` (``(d, n)``) within each class -> ``(d, K)``."""
    Z = _one_hot(Y, K)
    return (mat @ Z) / Z.sum(axis=0)


def _require_invertible(m: np.ndarray, name: str, rtol: float = 1e-12):
    w = np.linalg.eigvalsh((m + m.T) / 2)
    top = max(abs(w[-1]), abs(w[0]))
    if top == 0 or w[0] <= rtol * top * m.shape[0]:
        raise SingularMatrixError(name, f"smallest eigenvalue {w[0]:.3g}")


def estimate_covariate_block(U, Y, K: int | None = None) -> CovariateBlock:
    """Class means, pooled covariance (divisor n) and discriminant directions."""
    Y, K = _check_labels(Y, K)
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    n, q = U.shape
    if q >= n:
        raise ValueError(f"covariate dimension q={q} must be below n={n}")
    phi = _class_means(U.T, Y, K).T  # (K, q)
    centered = U - phi[Y - 1]
    psi = centered.T @ centered / n
    _require_invertible(psi, "covariate covariance Psi")
    gamma = np.linalg.solve(psi, (phi - phi[0]).T).T
    gamma[0] = 0.0
    return CovariateBlock(phi=phi, psi=psi, gamma=gamma)


def _centered(X, U, Y, K):
    Xmat = _flat(np.asarray(X, dtype=np.float64))
    Xc = Xmat - _class_means(Xmat, Y, K)[:, Y - 1]
    if U is None:
        return Xc, None
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    Uc = U.T - _class_means(U.T, Y, K)[:, Y - 1]  # (q, n)
    return Xc, Uc


def estimate_alpha(X, U, Y, K: int | None = None) -> np.ndarray:
    """Covariate-effect tensor of shape ``(p_1, ..., p_M, q)``.

    Pooled within-class least squares of every tensor entry on the
    covariates, both centered by their class means.
    """
    Y, K = _check_labels(Y, K)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != Y.size:
        raise ValueError("X and Y disagree on the number of observations")
    Xc, Uc = _centered(X, U, Y, K)
    gram = Uc @ Uc.T
    _require_invertible(gram, "centered covariate Gram matrix")
    coef = np.linalg.solve(gram, Uc @ Xc.T)  # (q, p)
    return coef.T.reshape(X.shape[:-1] + (Uc.shape[0],), order="F")


def estimate_mu(X, U, Y, alpha=None, K: int | None = None) -> np.ndarray:
    """Covariate-adjusted class means, stacked ``(K, p_1, ..., p_M)``."""
    Y, K = _check_labels(Y, K)
    X = np.asarray(X, dtype=np.float64)
    shape = X.shape[:-1]
    means = _class_means(_flat(X), Y, K)  # (p, K)
    if alpha is not None and U is not None:
        alpha = np.asarray(alpha, dtype=np.float64)
        U = np.asarray(U, dtype=np.float64)
        if U.ndim == 1:
            U = U[:, None]
        if alpha.shape != shape + (U.shape[1],):
            raise ValueError(f"alpha shape {alpha.shape} incompatible with {shape} and q={U.shape[1]}")
        ubar = _class_means(U.T, Y, K)  # (q, K)
        means = means - alpha.reshape(-1, U.shape[1], order="F") @ ubar
    return np.stack([means[:, k].reshape(shape, order="F") for k in range(K)])


def residuals(X, U, Y, alpha=None, K: int | None = None) -> np.ndarray:
    """Fitted errors ``(X^i - Xbar_k) - alpha x (U^i - Ubar_k)``, stacked like X."""
    Y, K = _check_labels(Y, K)
    X = np.asarray(X, dtype=np.float64)
    Xc, Uc = _centered(X, U if alpha is not None else None, Y, K)
    if Uc is not None:
        Xc = Xc - np.asarray(alpha, dtype=np.float64).reshape(-1, Uc.shape[0], order="F") @ Uc
    return Xc.reshape(X.shape, order="F")


def pooled_reference_variance(res: np.ndarray) -> float:
    """Pooled within-class variance of the first tensor entry (divisor n)."""
    first = res[(0,) * (res.ndim - 1)]
    return float(np.mean(first**2))


def check_pd_condition(n: int, K: int, shape: Sequence[int]) -> list[bool]:
    """Per mode j, whether ``(n - K) * prod(p_m, m != j) > p_j``."""
    shape = tuple(shape)
    total = prod(shape)
    return [(n - K) * (total // p) > p for p in shape]


def perturb_sigma(sigma, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"perturbation gamma must be positive, got {gamma}")
    sigma = np.asarray(sigma, dtype=np.float64)
    return sigma + gamma * np.eye(sigma.shape[0])


def estimate_sigmas(res, var_ref: float | None = None) -> list[np.ndarray]:
    """Per-mode covariance estimates from stacked residuals ``(p_1..p_M, n)``.

    Each unnormalized ``S_j`` averages ``E_(j) E_(j)^T`` over observations and
    the other modes.  Modes ``j < M`` are rescaled to a unit (1, 1) entry; the
    last mode absorbs the overall scale so that the product of the (1, 1)
    entries equals ``var_ref``.
    """
    res = np.asarray(res, dtype=np.float64)
    shape = res.shape[:-1]
    n = res.shape[-1]
    total = prod(shape)
    if var_ref is None:
        var_ref = pooled_reference_variance(res)
    raw = []
    for j in range(1, len(shape) + 1):
        Ej = mode_matricize(res, j)  # (p_j, p_-j * n), all observations side by side
        S = Ej @ Ej.T / (n * (total // shape[j - 1]))
        raw.append((S + S.T) / 2)
    out = []
    for j, S in enumerate(raw):
        s11 = S[0, 0]
        if not s11 > 0:
            raise SingularMatrixError(f"mode-{j + 1} covariance", "zero (1,1) entry")
        if j < len(raw) - 1:
            out.append(S / s11)
        else:
            out.append(S * (var_ref / s11))
    return out


def _needs_ridge(sigma: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(sigma)
    return w[0] <= 1e-12 * max(w[-1], 0.0) * sigma.shape[0]


def apply_pd_policy(sigmas, n: int, K: int, gamma_rel: float = DEFAULT_PD_GAMMA):
    """Ridge each mode whose covariance may be singular.

    The ridge is ``gamma_rel`` times the mean diagonal of that mode.
    Returns the adjusted list and the 1-based modes that were perturbed.
    """
    shape = [s.shape[0] for s in sigmas]
    ok = check_pd_condition(n, K, shape)
    out, touched = [], []
    for j, (S, good) in enumerate(zip(sigmas, ok), start=1):
        if not good or _needs_ridge(S):
            gamma = gamma_rel * float(np.mean(np.diag(S)))
            if not gamma > 0:
                gamma = gamma_rel
            S = perturb_sigma(S, gamma)
            touched.append(j)
            logger.info("mode %d covariance ridged with gamma=%.3g", j, gamma)
        out.append(S)
    return out, touched


def estimate_parameters(data: LabeledDataset, pd_gamma: float = DEFAULT_PD_GAMMA) -> CatchModel:
    """Every parameter except the discriminant tensors (returned as zeros)."""
    data.check_estimable()
    X, U, Y, K = data.X, data.U, data.Y, data.K
    priors = estimate_priors(Y, K)
    cov = alpha = None
    if U is not None:
        cov = estimate_covariate_block(U, Y, K)
        alpha = estimate_alpha(X, U, Y, K)
    mu = estimate_mu(X, U, Y, alpha, K)
    res = residuals(X, U, Y, alpha, K)
    sigmas = estimate_sigmas(res)
    sigmas, touched = apply_pd_policy(sigmas, data.n, K, pd_gamma)
    return CatchModel(
        priors=priors,
        mu=mu,
        sigmas=sigmas,
        B=np.zeros((K - 1,) + data.shape),
        covariates=cov,
        alpha=alpha,
        perturbed_modes=touched,
    )
