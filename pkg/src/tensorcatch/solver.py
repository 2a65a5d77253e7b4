"""Group-lasso block coordinate descent for the sparse discriminant tensors.

The problem, over the ``(K-1) x p`` coefficient matrix ``beta`` (row k is
``vec(B_{k+1})``), is::

    sum_k [ beta_k' S beta_k - 2 delta_k' beta_k ] + 2 lam * sum_j ||beta[:, j]||

with ``S = Sigma_M kron ... kron Sigma_1`` and ``delta_k = vec(mu_{k+1} - mu_1)``.
The penalty weight ``2 lam`` is the scaling under which the block update
soft-thresholds the unpenalized block minimizer at ``lam / s_jj``, so block j
is zero exactly when ``||delta_j - (beta S)_j + s_jj beta_j|| <= lam``.
``S`` is never formed.  The solver keeps ``grad = beta S`` in sync; a change
in block j costs one column of ``S``, rebuilt on the fly from the j_m-th
columns of the mode covariances, so working storage stays at
``O(sum p_m^2 + K p)``.

The sweep itself runs in a compiled kernel when available and in
:mod:`tensorcatch._cd_python` otherwise.  Set ``TENSORCATCH_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from math import prod
from typing import Optional, Sequence

import numpy as np

from . import _cd_python
from .tensor import linear_to_multi_index, tucker

logger = logging.getLogger(__name__)

try:
    if os.environ.get("TENSORCATCH_PURE_PYTHON"):
        raise ImportError("pure-Python kernel requested")
    from . import _cd_kernel as _default_kernel

    KERNEL = "cython"
except ImportError:  # pragma: no cover - depends on the build
    _default_kernel = _cd_python
    KERNEL = "python"

__all__ = [
    "KERNEL",
    "available_kernels",
    "SolverConfig",
    "SolverInputs",
    "SingleFit",
    "FitPath",
    "group_soft_threshold",
    "partial_residual_score",
    "evaluate_objective",
    "block_gradient",
    "kkt_violation",
    "lambda_max",
    "lambda_sequence",
    "fit_single",
    "fit_path",
]


def available_kernels() -> dict:
    out = {"python": _cd_python}
    try:
        from . import _cd_kernel

        out["cython"] = _cd_kernel
    except ImportError:  # pragma: no cover
        pass
    return out


def _get_kernel(name: str | None):
    if name is None:
        return _default_kernel
    kernels = available_kernels()
    if name not in kernels:
        raise ValueError(f"kernel {name!r} not available; have {sorted(kernels)}")
    return kernels[name]


@dataclass
class SolverConfig:
    """Settings for :func:`fit_single` and :func:`fit_path`.

    ``lambdas=None`` builds an automatic geometric path of ``n_lambda`` values
    from ``lambda_max`` down to ``lambda_min_ratio * lambda_max`` (0.05 by
    default, 0.01 when n exceeds p).  ``tol`` bounds the largest absolute
    coefficient change over a full sweep; ``max_sweeps`` caps full sweeps.
    ``max_selected`` stops a path early, after the first point selecting more
    positions than that; later (denser, slower) points are dropped.
    """

    lambdas: Optional[Sequence[float]] = None
    n_lambda: int = 50
    lambda_min_ratio: Optional[float] = None
    max_sweeps: int = 200
    tol: float = 1e-6
    kkt_tol: float = 1e-6
    pd_gamma: float = 1e-4
    trace: bool = True
    kernel: Optional[str] = None
    max_selected: Optional[int] = None

    def __post_init__(self):
        if self.max_selected is not None and self.max_selected < 1:
            raise ValueError("max_selected must be a positive integer")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be a positive integer")
        if self.lambdas is not None:
            lam = np.asarray(self.lambdas, dtype=np.float64)
            if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0):
                raise ValueError("lambdas must be a nonempty sequence of positive values")
            if np.any(np.diff(lam) >= 0):
                raise ValueError("lambdas must be strictly decreasing")


class SolverInputs:
    """Mode covariances and class mean contrasts in the layout the kernels use."""

    def __init__(self, sigmas: Sequence, delta):
        self.sigmas = [np.ascontiguousarray((np.asarray(s, float) + np.asarray(s, float).T) / 2)
                       for s in sigmas]
        self.dims = np.array([s.shape[0] for s in self.sigmas], dtype=np.int64)
        self.shape = tuple(int(d) for d in self.dims)
        self.p = prod(self.shape)
        delta = np.asarray(delta, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        if delta.shape[1] != self.p:
            raise ValueError(f"delta has {delta.shape[1]} columns, expected {self.p}")
        self.delta = np.ascontiguousarray(delta)
        self.sig_flat = np.concatenate([s.ravel() for s in self.sigmas])
        self.sig_off = np.concatenate([[0], np.cumsum(self.dims**2)[:-1]]).astype(np.int64)
        diag = np.ones(1)
        for s in self.sigmas:
            diag = np.multiply.outer(np.diag(s), diag).ravel()
        if np.any(diag <= 0):
            raise ValueError("all covariance diagonals must be positive")
        self.diag = diag

    @classmethod
    def from_means(cls, sigmas, mu) -> "SolverInputs":
        """Build from stacked class means ``(K, p_1, ..., p_M)``."""
        mu = np.asarray(mu, dtype=np.float64)
        delta = np.stack([(mu[k] - mu[0]).ravel(order="F") for k in range(1, mu.shape[0])])
        return cls(sigmas, delta)

    @property
    def n_contrasts(self) -> int:
        return self.delta.shape[0]

    def gradient_matrix(self, beta) -> np.ndarray:
        """Exact ``beta @ S`` row-wise via Tucker products."""
        beta = np.asarray(beta, dtype=np.float64)
        out = np.empty_like(beta)
        for k in range(beta.shape[0]):
            bk = beta[k].reshape(self.shape, order="F")
            out[k] = tucker(bk, self.sigmas).ravel(order="F")
        return out


def group_soft_threshold(beta_tilde, threshold: float) -> np.ndarray:
    """``beta_tilde * (1 - threshold / ||beta_tilde||)_+``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    b = np.asarray(beta_tilde, dtype=np.float64)
    norm = float(np.linalg.norm(b))
    if norm <= threshold or norm == 0.0:
        return np.zeros_like(b)
    return b * (1.0 - threshold / norm)


def partial_residual_score(j: int, beta, inputs: SolverInputs) -> np.ndarray:
    """Unpenalized block minimizer at vec position ``j`` (1-based).

    Computes ``[delta_kj - <<B_k^j; Sigma_1[j_1, :], ..., Sigma_M[j_M, :]>>] / s_jj``
    where ``B_k^j`` is the current coefficient tensor with position j zeroed.
    Group soft-thresholding this vector at ``lam / s_jj`` gives the exact
    block update.
    """
    idx = linear_to_multi_index(j, inputs.shape)
    beta = np.asarray(beta, dtype=np.float64)
    rows = [s[i - 1][None, :] for s, i in zip(inputs.sigmas, idx)]
    sjj = prod(float(s[i - 1, i - 1]) for s, i in zip(inputs.sigmas, idx))
    if not sjj > 0:
        raise ValueError(f"zero covariance diagonal at position {j}")
    out = np.empty(beta.shape[0])
    for k in range(beta.shape[0]):
        Bkj = beta[k].copy()
        Bkj[j - 1] = 0.0
        contraction = tucker(Bkj.reshape(inputs.shape, order="F"), rows).item()
        out[k] = (inputs.delta[k, j - 1] - contraction) / sjj
    return out


def _objective_from_grad(beta, grad, delta, lam) -> float:
    quad = float(np.einsum("kj,kj->", beta, grad - 2.0 * delta))
    return quad + 2.0 * lam * float(np.sqrt((beta * beta).sum(axis=0)).sum())


def evaluate_objective(beta, inputs: SolverInputs, lam: float) -> float:
    """Penalized objective at ``beta`` computed through Tucker contractions."""
    beta = np.asarray(beta, dtype=np.float64).reshape(inputs.n_contrasts, inputs.p)
    return _objective_from_grad(beta, inputs.gradient_matrix(beta), inputs.delta, lam)


def block_gradient(beta, inputs: SolverInputs, grad=None) -> np.ndarray:
    """Half the gradient of the smooth part, ``beta S - delta``, shape ``(K-1, p)``."""
    if grad is None:
        grad = inputs.gradient_matrix(beta)
    return grad - inputs.delta


def kkt_violation(beta, inputs: SolverInputs, lam: float, grad=None) -> float:
    """Largest blockwise violation of the optimality conditions.

    Nonzero blocks need ``g_j + lam * beta_j / ||beta_j|| = 0``; zero blocks
    need ``||g_j|| <= lam``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    g = block_gradient(beta, inputs, grad)
    norms = np.sqrt((beta * beta).sum(axis=0))
    active = norms > 0
    worst = 0.0
    if np.any(active):
        resid = g[:, active] + lam * beta[:, active] / norms[active]
        worst = float(np.sqrt((resid * resid).sum(axis=0)).max())
    if np.any(~active):
        gn = np.sqrt((g[:, ~active] ** 2).sum(axis=0))
        worst = max(worst, float(np.max(gn - lam, initial=0.0)))
    return worst


def lambda_max(inputs: SolverInputs) -> float:
    """Smallest penalty at which the all-zero solution is optimal."""
    return float(np.sqrt((inputs.delta**2).sum(axis=0)).max())


def lambda_sequence(inputs: SolverInputs, n_lambda: int = 50, min_ratio: float = 0.05) -> np.ndarray:
    top = lambda_max(inputs)
    if top == 0:
        raise ValueError("all class means coincide; every penalty gives the zero solution")
    if n_lambda == 1:
        return np.array([top])
    return np.geomspace(top, top * min_ratio, n_lambda)


@dataclass
class SingleFit:
    beta: np.ndarray
    lam: float
    objective: float
    sweeps: int
    active_sweeps: int
    converged: bool
    kkt: float
    trace: list = field(default_factory=list)

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.beta != 0, axis=0)) + 1

    @property
    def monotone(self) -> bool:
        t = np.asarray(self.trace)
        if t.size < 2:
            return True
        slack = 1e-10 * np.maximum(1.0, np.abs(t[:-1]))
        return bool(np.all(np.diff(t) <= slack))


def fit_single(lam: float, inputs: SolverInputs, config: SolverConfig | None = None,
               warm_start=None) -> SingleFit:
    """Minimize the penalized objective at one ``lam``.

    Full sweeps alternate with sweeps restricted to the current nonzero
    blocks, which are iterated to ``tol / 100``.  Convergence needs a full sweep whose largest coefficient change
    is at most ``tol`` and a KKT violation at most ``kkt_tol``.  Hitting
    ``max_sweeps`` returns the last (lowest-objective) iterate with
    ``converged=False``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    config = config or SolverConfig()
    kernel = _get_kernel(config.kernel)
    K1, p = inputs.n_contrasts, inputs.p
    if warm_start is None:
        beta = np.zeros((K1, p))
        grad = np.zeros((K1, p))
    else:
        beta = np.array(warm_start, dtype=np.float64).reshape(K1, p)
        grad = inputs.gradient_matrix(beta)
    colbuf = np.empty(p)
    full = np.arange(p, dtype=np.int64)
    args = (inputs.dims, inputs.sig_flat, inputs.sig_off, inputs.diag, inputs.delta)

    trace = [_objective_from_grad(beta, grad, inputs.delta, lam)] if config.trace else []

    def run(coords):
        change = kernel.sweep(coords, *args, beta, grad, lam, colbuf)
        if config.trace:
            trace.append(_objective_from_grad(beta, grad, inputs.delta, lam))
        return change

    sweeps = active_sweeps = 0
    converged = False
    kkt = np.inf
    while sweeps < config.max_sweeps:
        change = run(full)
        sweeps += 1
        if change <= config.tol:
            grad = inputs.gradient_matrix(beta)  # drop accumulated rounding
            kkt = kkt_violation(beta, inputs, lam, grad)
            if kkt <= config.kkt_tol:
                converged = True
                break
            continue
        # restricted sweeps are cheap, so polish the active blocks well past tol
        active = np.flatnonzero(np.any(beta != 0, axis=0)).astype(np.int64)
        for _ in range(10 * config.max_sweeps):
            if active.size == 0:
                break
            active_sweeps += 1
            if run(active) <= 0.01 * config.tol:
                break
    if not converged:
        grad = inputs.gradient_matrix(beta)
        kkt = kkt_violation(beta, inputs, lam, grad)
        logger.warning("lambda=%.4g: no convergence after %d sweeps (KKT %.2e)", lam, sweeps, kkt)
    objective = _objective_from_grad(beta, grad, inputs.delta, lam)
    return SingleFit(beta=beta, lam=float(lam), objective=objective, sweeps=sweeps,
                     active_sweeps=active_sweeps, converged=converged, kkt=kkt, trace=trace)


@dataclass
class FitPath:
    """Solutions along a decreasing penalty sequence."""

    lambdas: np.ndarray
    betas: np.ndarray  # (L, K-1, p)
    objectives: np.ndarray
    sweeps: np.ndarray
    converged: np.ndarray
    kkt: np.ndarray
    monotone: np.ndarray
    traces: list
    shape: tuple

    def __len__(self):
        return self.lambdas.size

    def selected(self, index: int) -> np.ndarray:
        """1-based vec positions with a nonzero coefficient group."""
        return np.flatnonzero(np.any(self.betas[index] != 0, axis=0)) + 1

    def n_selected(self) -> np.ndarray:
        return np.array([self.selected(i).size for i in range(len(self))])

    def coefficients(self, index: int) -> np.ndarray:
        """Stacked ``(K-1, p_1, ..., p_M)`` coefficient tensors at one path point."""
        return np.stack([b.reshape(self.shape, order="F") for b in self.betas[index]])


def fit_path(inputs: SolverInputs, config: SolverConfig | None = None,
             n_obs: int | None = None) -> FitPath:
    """Fit a decreasing penalty path with warm starts."""
    config = config or SolverConfig()
    if config.lambdas is not None:
        lambdas = np.asarray(config.lambdas, dtype=np.float64)
    else:
        ratio = config.lambda_min_ratio
        if ratio is None:
            ratio = 0.01 if (n_obs is not None and n_obs > inputs.p) else 0.05
        lambdas = lambda_sequence(inputs, config.n_lambda, ratio)
    betas = np.empty((lambdas.size, inputs.n_contrasts, inputs.p))
    objectives = np.empty(lambdas.size)
    sweeps = np.empty(lambdas.size, dtype=np.int64)
    converged = np.empty(lambdas.size, dtype=bool)
    kkt = np.empty(lambdas.size)
    monotone = np.empty(lambdas.size, dtype=bool)
    traces = []
    warm = None
    for i, lam in enumerate(lambdas):
        fit = fit_single(float(lam), inputs, config, warm_start=warm)
        warm = fit.beta
        betas[i] = fit.beta
        objectives[i] = fit.objective
        sweeps[i] = fit.sweeps + fit.active_sweeps
        converged[i] = fit.converged
        kkt[i] = fit.kkt
        monotone[i] = fit.monotone
        traces.append(fit.trace)
        if config.max_selected is not None and np.any(fit.beta != 0, axis=0).sum() > config.max_selected:
            stop = i + 1
            lambdas, betas, objectives, sweeps = lambdas[:stop], betas[:stop], objectives[:stop], sweeps[:stop]
            converged, kkt, monotone = converged[:stop], kkt[:stop], monotone[:stop]
            break
    return FitPath(lambdas=lambdas, betas=betas, objectives=objectives, sweeps=sweeps,
                   converged=converged, kkt=kkt, monotone=monotone, traces=traces,
                   shape=inputs.shape)
