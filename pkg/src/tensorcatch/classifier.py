"""Linear discriminant rule built from fitted parameters, plus tuning helpers."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .estimation import CatchModel, LabeledDataset, estimate_parameters
from .solver import FitPath, SolverConfig, SolverInputs, fit_path, lambda_sequence

__all__ = [
    "CovariateMismatchError",
    "Prediction",
    "SelectionMetrics",
    "intercepts",
    "with_coefficients",
    "decision_scores",
    "classify",
    "predict",
    "error_rate",
    "selection_metrics",
    "CatchFit",
    "fit_catch",
    "CVResult",
    "stratified_folds",
    "cross_validate",
    "best_index",
]


class CovariateMismatchError(ValueError):
    """Covariates supplied to a model without them, or missing for a model with them."""


@dataclass(frozen=True)
class Prediction:
    label: int
    scores: np.ndarray


@dataclass(frozen=True)
class SelectionMetrics:
    tpr: float
    fpr: float


def _flat_B(B: np.ndarray) -> np.ndarray:
    return np.stack([b.ravel(order="F") for b in B]) if len(B) else np.zeros((0, 0))


def _intercepts_from(priors, mu, Bflat, cov) -> np.ndarray:
    """``a_k`` for every class; ``Bflat`` is ``(..., K-1, p)``."""
    K = priors.size
    half_sum = np.stack([((mu[k] + mu[0]) / 2).ravel(order="F") for k in range(1, K)])  # (K-1, p)
    a = np.log(priors[1:] / priors[0]) - np.einsum("...kp,kp->...k", Bflat, half_sum)
    if cov is not None:
        g, phi = cov.gamma, cov.phi
        a = a - 0.5 * np.einsum("kq,kq->k", g[1:], phi[1:] + phi[0])
    zeros = np.zeros(a.shape[:-1] + (1,))
    return np.concatenate([zeros, a], axis=-1)


def intercepts(model: CatchModel) -> np.ndarray:
    """``a_1..a_K`` with ``a_1 = 0``; covariate terms drop out without covariates."""
    return _intercepts_from(model.priors, model.mu, _flat_B(model.B), model.covariates)


def with_coefficients(model: CatchModel, B, lam: float | None = None) -> CatchModel:
    """Copy of ``model`` carrying discriminant tensors ``B`` and matching intercepts."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape != (model.K - 1,) + model.shape:
        raise ValueError(f"B must have shape {(model.K - 1,) + model.shape}, got {B.shape}")
    out = replace(model, B=B, lam=lam)
    out.intercepts = intercepts(out)
    return out


def _check_covariates(model: CatchModel, U, n: int):
    if model.has_covariates and U is None:
        raise CovariateMismatchError("model was fit with covariates; U is required")
    if not model.has_covariates and U is not None:
        raise CovariateMismatchError("model was fit without covariates; U must be omitted")
    if U is None:
        return None
    q = model.covariates.phi.shape[1]
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U.reshape(n, -1) if q == 1 else U.reshape(-1, q)
    if U.shape != (n, q):
        raise ValueError(f"U must have shape {(n, q)}, got {U.shape}")
    return U


def _adjusted(model: CatchModel, X, U) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """``X - alpha x U`` as a ``(p, n)`` matrix, with the validated U."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[:-1] != model.shape:
        raise ValueError(f"X must have shape {model.shape} + (n,), got {X.shape}")
    n = X.shape[-1]
    U = _check_covariates(model, U, n)
    Xmat = X.reshape(-1, n, order="F")
    if U is not None and model.alpha is not None:
        Xmat = Xmat - model.alpha.reshape(-1, U.shape[1], order="F") @ U.T
    return Xmat, U


def _scores(model: CatchModel, Xmat, U, Bflat, a) -> np.ndarray:
    """Scores ``(..., n, K)`` for coefficient stacks ``Bflat`` ``(..., K-1, p)``."""
    lin = np.einsum("...kp,pn->...nk", Bflat, Xmat)
    if U is not None:
        lin = lin + U @ model.covariates.gamma[1:].T
    out = np.zeros(lin.shape[:-1] + (model.K,))
    out[..., 1:] = lin
    return out + a[..., None, :]


def decision_scores(model: CatchModel, X, U=None) -> np.ndarray:
    """Discriminant scores for stacked observations ``X`` ``(p_1..p_M, n)`` -> ``(n, K)``."""
    Xmat, U = _adjusted(model, X, U)
    a = model.intercepts if model.intercepts is not None else intercepts(model)
    return _scores(model, Xmat, U, _flat_B(model.B), a)


def classify(model: CatchModel, x, u=None) -> Prediction:
    """Label and scores for a single observation (ties go to the smallest label)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.shape:
        raise ValueError(f"x must have shape {model.shape}, got {x.shape}")
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))[None, :]
    s = decision_scores(model, x[..., None], u)[0]
    return Prediction(label=int(np.argmax(s)) + 1, scores=s)


def predict(model: CatchModel, X, U=None) -> np.ndarray:
    return np.argmax(decision_scores(model, X, U), axis=1) + 1


def error_rate(model: CatchModel, data: LabeledDataset) -> float:
    if data.n == 0:
        return float("nan")
    return float(np.mean(predict(model, data.X, data.U) != data.Y))


def selection_metrics(estimated, true, total: int) -> SelectionMetrics:
    """True and false positive rates of an estimated index set."""
    est = {int(j) for j in estimated}
    tru = {int(j) for j in true}
    if not tru:
        raise ValueError("true discriminative set is empty; TPR undefined")
    for j in est | tru:
        if not 1 <= j <= total:
            raise ValueError(f"position {j} outside 1..{total}")
    null = total - len(tru)
    tpr = len(est & tru) / len(tru)
    fpr = len(est - tru) / null if null else 0.0
    return SelectionMetrics(tpr=tpr, fpr=fpr)


@dataclass
class CatchFit:
    """Closed-form estimates plus a penalized coefficient path."""

    base: CatchModel
    path: FitPath

    @property
    def lambdas(self) -> np.ndarray:
        return self.path.lambdas

    def model(self, index: int) -> CatchModel:
        return with_coefficients(self.base, self.path.coefficients(index),
                                 float(self.path.lambdas[index]))

    def path_intercepts(self) -> np.ndarray:
        b = self.base
        return _intercepts_from(b.priors, b.mu, self.path.betas, b.covariates)

    def path_scores(self, X, U=None) -> np.ndarray:
        """Scores for every path point at once, ``(L, n, K)``."""
        Xmat, U = _adjusted(self.base, X, U)
        return _scores(self.base, Xmat, U, self.path.betas, self.path_intercepts())

    def path_errors(self, data: LabeledDataset) -> np.ndarray:
        s = self.path_scores(data.X, data.U)
        return np.mean(np.argmax(s, axis=2) + 1 != data.Y[None, :], axis=1)


def fit_catch(data: LabeledDataset, config: SolverConfig | None = None) -> CatchFit:
    """Estimate all parameters and the sparse discriminant path."""
    config = config or SolverConfig()
    base = estimate_parameters(data, config.pd_gamma)
    inputs = SolverInputs.from_means(base.sigmas, base.mu)
    path = fit_path(inputs, config, n_obs=data.n)
    return CatchFit(base=base, path=path)


def best_index(errors: Sequence[float]) -> int:
    """Position of the smallest error; ties go to the larger penalty (earlier index)."""
    errors = np.asarray(errors, dtype=np.float64)
    return int(np.flatnonzero(errors == errors.min())[0])


def stratified_folds(Y, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id (0-based) per observation, balanced within each class."""
    Y = np.asarray(Y)
    out = np.empty(Y.size, dtype=np.int64)
    offset = 0
    for k in np.unique(Y):
        idx = np.flatnonzero(Y == k)
        idx = idx[rng.permutation(idx.size)]
        out[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return out


@dataclass
class CVResult:
    lambdas: np.ndarray
    errors: np.ndarray  # (folds, L)
    best: int

    @property
    def mean_error(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        f = self.errors.shape[0]
        return self.errors.std(axis=0, ddof=1) / np.sqrt(f) if f > 1 else np.zeros(self.lambdas.size)

    @property
    def best_lambda(self) -> float:
        return float(self.lambdas[self.best])


def cross_validate(data: LabeledDataset, config: SolverConfig | None = None, folds: int = 5,
                   seed: int = 0) -> CVResult:
    """Stratified K-fold choice of the penalty by misclassification error."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    config = config or SolverConfig()
    if config.lambdas is None:
        base = estimate_parameters(data, config.pd_gamma)
        ratio = config.lambda_min_ratio
        if ratio is None:
            ratio = 0.01 if data.n > int(np.prod(data.shape)) else 0.05
        lambdas = lambda_sequence(SolverInputs.from_means(base.sigmas, base.mu), config.n_lambda, ratio)
    else:
        lambdas = np.asarray(config.lambdas, dtype=np.float64)
    cfg = replace(config, lambdas=lambdas)
    assign = stratified_folds(data.Y, folds, np.random.default_rng(seed))
    errors = np.empty((folds, lambdas.size))
    for f in range(folds):
        test_idx = np.flatnonzero(assign == f)
        train_idx = np.flatnonzero(assign != f)
        for name, idx in (("held-out", test_idx), ("training", train_idx)):
            missing = sorted(set(range(1, data.K + 1)) - set(np.unique(data.Y[idx]).tolist()))
            if missing:
                raise ValueError(f"fold {f + 1} {name} part is missing class {missing[0]}")
        fit = fit_catch(data.subset(train_idx), cfg)
        errors[f] = fit.path_errors(data.subset(test_idx))
    return CVResult(lambdas=lambdas, errors=errors, best=best_index(errors.mean(axis=0)))
