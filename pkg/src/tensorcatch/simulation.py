"""Generative models, baselines and the Monte Carlo experiment harness.

Random streams
--------------
Every experiment seed feeds :class:`numpy.random.SeedSequence`.  Replicate r
uses child ``r`` of ``SeedSequence(seed).spawn(replicates)``, and each
replicate spawns three grandchildren for the training, validation and test
splits, each driving a :class:`numpy.random.PCG64` generator.  Results
therefore do not depend on how replicates are scheduled across workers.
"""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import prod
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .classifier import (
    best_index,
    fit_catch,
    selection_metrics,
    with_coefficients,
)
from .estimation import CatchModel, CovariateBlock, LabeledDataset
from .solver import SolverConfig
from .tensor import tucker

logger = logging.getLogger(__name__)

__all__ = [
    "CovSpec",
    "SimulationSpec",
    "CATALOG",
    "get_spec",
    "make_cov",
    "sqrt_psd",
    "sample_tn",
    "generate_split",
    "generate",
    "true_model",
    "bayes_rule_error",
    "example1_model",
    "example1_rates",
    "example1_monte_carlo",
    "tensor_oracle",
    "VectorOracle",
    "MethodResult",
    "run_experiment",
    "METHODS",
    "parse_spec_text",
]

METHODS = ("catch", "catch_x", "bayes", "tensor_oracle", "vector_oracle")


@dataclass(frozen=True)
class CovSpec:
    """Mode covariance: ``identity``, ``AR`` (rho^|i-j|) or ``CS`` (constant rho off-diagonal)."""

    kind: str
    size: int
    rho: float = 0.0

    def __post_init__(self):
        kind = self.kind.upper() if self.kind.lower() != "identity" else "identity"
        object.__setattr__(self, "kind", kind)
        if kind not in ("identity", "AR", "CS"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("size must be positive")
        if kind == "AR" and not abs(self.rho) < 1:
            raise ValueError(f"AR({self.rho}) is not positive definite")
        if kind == "CS" and self.size > 1 and not (-1.0 / (self.size - 1) < self.rho < 1):
            raise ValueError(f"CS({self.rho}) of size {self.size} is not positive definite")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or self.rho == 0.0

    def label(self) -> str:
        return "I" if self.kind == "identity" else f"{self.kind}({self.rho:g})"


def make_cov(spec: CovSpec) -> np.ndarray:
    p = spec.size
    if spec.kind == "identity":
        return np.eye(p)
    if spec.kind == "AR":
        idx = np.arange(p)
        return spec.rho ** np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    out = np.full((p, p), float(spec.rho))
    np.fill_diagonal(out, 1.0)
    return out


def sqrt_psd(m) -> np.ndarray:
    """Symmetric square root via eigendecomposition."""
    w, v = np.linalg.eigh(np.asarray(m, dtype=np.float64))
    if w[0] < -1e-10 * max(abs(w[-1]), 1.0):
        raise ValueError("matrix is not positive semi-definite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


Box = tuple  # per-mode tuples of 1-based indices


@dataclass
class SimulationSpec:
    """A generative model with separable covariance and sparse discriminant tensors.

    ``placements`` lists ``(box, values)``: ``box`` gives the 1-based indices
    per mode (the cross product is filled), ``values`` holds one entry per
    class 2..K.  Class means follow ``mu_1 = 0``, ``mu_k = [[B_k; Sigma_1..Sigma_M]]``.
    With covariates, ``U | Y=k ~ N(phi_k, psi)`` and the covariate effect is
    ``[[alpha_star; Sigma_1^(1/2), ..., Sigma_M^(1/2), I_q]]`` where
    ``alpha_star`` is the constant ``alpha_value`` on ``alpha_box`` (last entry
    of the box indexes the covariate).
    """

    name: str
    shape: tuple
    K: int
    class_sizes: tuple
    covs: tuple
    placements: tuple
    phi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    alpha_box: Optional[Box] = None
    alpha_value: float = 0.0
    n_test: int = 10_000
    n_val: Optional[tuple] = None

    def __post_init__(self):
        self.shape = tuple(int(p) for p in self.shape)
        self.class_sizes = tuple(int(c) for c in self.class_sizes)
        if len(self.class_sizes) != self.K:
            raise ValueError("need one class size per class")
        if len(self.covs) != len(self.shape):
            raise ValueError("need one covariance spec per mode")
        for c, p in zip(self.covs, self.shape):
            if c.size != p:
                raise ValueError(f"covariance size {c.size} does not match mode size {p}")
        for box, values in self.placements:
            self._check_box(box, self.shape)
            if len(values) != self.K - 1:
                raise ValueError("placements need one value per class 2..K")
        if self.phi is not None:
            self.phi = np.atleast_2d(np.asarray(self.phi, dtype=np.float64))
            if self.phi.shape[0] != self.K:
                raise ValueError("phi needs one row per class")
            if self.psi is None:
                self.psi = np.eye(self.q)
            self.psi = np.asarray(self.psi, dtype=np.float64)
            if self.alpha_box is not None:
                self._check_box(self.alpha_box, self.shape + (self.q,))

    @staticmethod
    def _check_box(box, shape):
        if len(box) != len(shape):
            raise ValueError(f"index box {box} does not match order {len(shape)}")
        for idx, p in zip(box, shape):
            for i in idx:
                if not 1 <= i <= p:
                    raise ValueError(f"index {i} outside 1..{p}")

    @property
    def q(self) -> int:
        return 0 if self.phi is None else self.phi.shape[1]

    @property
    def has_covariates(self) -> bool:
        return self.phi is not None

    @property
    def p(self) -> int:
        return prod(self.shape)

    @property
    def priors(self) -> np.ndarray:
        sizes = np.asarray(self.class_sizes, dtype=np.float64)
        return sizes / sizes.sum()

    def sigmas(self) -> list[np.ndarray]:
        return [make_cov(c) for c in self.covs]

    def sigma_roots(self) -> list[Optional[np.ndarray]]:
        return [None if c.is_identity else sqrt_psd(make_cov(c)) for c in self.covs]

    def coefficients(self) -> np.ndarray:
        """True discriminant tensors, stacked ``(K-1, p_1..p_M)``."""
        B = np.zeros((self.K - 1,) + self.shape)
        for box, values in self.placements:
            zero = np.ix_(*[np.asarray(ix) - 1 for ix in box])
            for k, v in enumerate(values):
                B[k][zero] = v
        return B

    def means(self) -> np.ndarray:
        sig = [None if c.is_identity else make_cov(c) for c in self.covs]
        B = self.coefficients()
        mu = np.zeros((self.K,) + self.shape)
        for k in range(1, self.K):
            mu[k] = tucker(B[k - 1], sig)
        return mu

    def alpha(self) -> Optional[np.ndarray]:
        if not self.has_covariates:
            return None
        a = np.zeros(self.shape + (self.q,))
        if self.alpha_box is not None and self.alpha_value != 0:
            a[np.ix_(*[np.asarray(ix) - 1 for ix in self.alpha_box])] = self.alpha_value
            a = tucker(a, self.sigma_roots() + [None])
        return a

    def true_set(self) -> np.ndarray:
        """1-based vec positions of the discriminative set."""
        B = self.coefficients()
        flat = np.stack([b.ravel(order="F") for b in B])
        return np.flatnonzero(np.any(flat != 0, axis=0)) + 1

    def describe(self) -> dict:
        return {
            "name": self.name,
            "shape": self.shape,
            "K": self.K,
            "class_sizes": self.class_sizes,
            "covs": [c.label() for c in self.covs],
            "placements": [(tuple(map(tuple, b)), tuple(v)) for b, v in self.placements],
            "phi": None if self.phi is None else self.phi.tolist(),
            "alpha_box": self.alpha_box,
            "alpha_value": self.alpha_value,
        }


def _cov_list(shape, kinds):
    return tuple(CovSpec(k, p, r) for p, (k, r) in zip(shape, kinds))


def _build_catalog() -> dict:
    I = ("identity", 0.0)
    AR7 = ("AR", 0.7)
    CS3 = ("CS", 0.3)
    rows = (1, 2, 11, 12)
    cat = {}

    # matrix models, 64 x 64, K = 4
    d1 = (rows, (1, 2))
    d2 = (rows, (11, 12))
    mshape = (64, 64)
    for name, kinds, b, b3, b4 in (
        ("M1", (I, I), 0.6, 1.8, 0.6),
        ("M2", (I, AR7), 0.4, 1.2, 0.4),
        ("M3", (CS3, AR7), 0.4, 1.2, 0.4),
    ):
        cat[name] = SimulationSpec(
            name=name, shape=mshape, K=4, class_sizes=(75,) * 4,
            covs=_cov_list(mshape, kinds),
            placements=((d1, (b, b, -b)), (d2, (b, b3, b4))),
        )

    # 3-way models, 30 x 36 x 30, K = 3
    tshape = (30, 36, 30)
    t1 = (rows, (1, 11), (1,))
    t2 = (rows, (1, 11), (11,))
    for name, kinds, b, b3 in (
        ("T1", (I, I, I), 0.6, 1.5),
        ("T2", (AR7, I, CS3), 0.4, 1.0),
        ("T3", (AR7, CS3, CS3), 0.4, 1.0),
    ):
        cat[name] = SimulationSpec(
            name=name, shape=tshape, K=3, class_sizes=(75,) * 3,
            covs=_cov_list(tshape, kinds),
            placements=((t1, (b, b)), (t2, (b, b3))),
        )
    cat["T3i"] = replace(cat["T3"], name="T3i", class_sizes=(40, 40, 200))

    # covariate models, 30 x 36 x 30, K = 2, q = 2
    cbox = (rows, (1, 11), (1, 11))
    alpha1 = (tuple(range(1, 6)),) * 3 + ((1,),), 0.5
    alpha2 = (tuple(range(1, 16)),) * 3 + ((1,),), 1.0
    for name, kinds, b, (abox, aval) in (
        ("C1", (I, I, I), 0.8, alpha2),
        ("C2", (AR7, I, CS3), 0.4, alpha1),
        ("C3", (AR7, CS3, CS3), 0.4, alpha1),
    ):
        cat[name] = SimulationSpec(
            name=name, shape=tshape, K=2, class_sizes=(75, 75),
            covs=_cov_list(tshape, kinds),
            placements=((cbox, (b,)),),
            phi=np.array([[0.0, 0.0], [0.3, 0.3]]), psi=np.eye(2),
            alpha_box=abox, alpha_value=aval,
        )
    c3 = cat["C3"]
    cat["C3a"] = replace(c3, name="C3a", phi=np.array([[0.0, 0.0], [1.0, 1.0]]), alpha_value=0.0)
    cat["C3b"] = replace(c3, name="C3b", phi=np.zeros((2, 2)))
    cat["C3i"] = replace(c3, name="C3i", class_sizes=(40, 200))

    # larger variants of C1-C3 (same parameters on an 80 x 80 x 80 grid)
    hshape = (80, 80, 80)
    for base in ("C1", "C2", "C3"):
        s = cat[base]
        cat[base + "H"] = replace(
            s, name=base + "H", shape=hshape,
            covs=tuple(CovSpec(c.kind, 80, c.rho) for c in s.covs),
        )
    return cat


CATALOG = _build_catalog()


class UnknownModelError(KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown model {name!r}; catalog: {', '.join(CATALOG)}")

    def __str__(self):
        return self.args[0]


def get_spec(name: str) -> SimulationSpec:
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownModelError(name) from None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_tn(mean, sigmas, n: int, rng_seed=None, roots=None) -> np.ndarray:
    """``n`` tensor-normal draws stacked along a trailing mode.

    Each draw is ``mean + [[Z; Sigma_1^(1/2), ..., Sigma_M^(1/2)]]`` with Z
    standard normal.  ``roots`` may pass precomputed square roots (``None``
    entries mean identity).
    """
    mean = np.asarray(mean, dtype=np.float64)
    rng = _rng(rng_seed)
    if roots is None:
        roots = [sqrt_psd(s) for s in sigmas]
    Z = rng.standard_normal(mean.size * n).reshape(mean.shape + (n,), order="F")
    W = tucker(Z, list(roots) + [None])
    return np.asfortranarray(W + mean[..., None])


def _draw_labels(spec: SimulationSpec, n: Optional[int], rng) -> np.ndarray:
    if n is None:
        return np.repeat(np.arange(1, spec.K + 1), spec.class_sizes)
    return rng.choice(np.arange(1, spec.K + 1), size=n, p=spec.priors)


class _Generator:
    """Cached true parameters for repeated sampling from one spec."""

    def __init__(self, spec: SimulationSpec):
        self.spec = spec
        self.mu = spec.means()
        self.mu_cols = np.stack([m.ravel(order="F") for m in self.mu], axis=1)
        self.roots = spec.sigma_roots()
        self.alpha = spec.alpha()
        self.psi_root = None if spec.psi is None else np.linalg.cholesky(spec.psi)

    def draw(self, labels: np.ndarray, rng) -> LabeledDataset:
        spec = self.spec
        n = labels.size
        E = sample_tn(np.zeros(spec.shape), None, n, rng, roots=self.roots)
        Emat = E.reshape(-1, n, order="F")
        Emat += self.mu_cols[:, labels - 1]
        U = None
        if spec.has_covariates:
            U = spec.phi[labels - 1] + rng.standard_normal((n, spec.q)) @ self.psi_root.T
            if self.alpha is not None:
                Emat += self.alpha.reshape(-1, spec.q, order="F") @ U.T
        return LabeledDataset(X=E, Y=labels, U=U, K=spec.K)


def generate_split(spec: SimulationSpec, n: Optional[int], rng_seed) -> LabeledDataset:
    """One data split.  ``n=None`` uses the spec's class sizes exactly;
    otherwise labels are drawn with probabilities proportional to them."""
    rng = _rng(rng_seed)
    gen = _Generator(spec)
    return gen.draw(_draw_labels(spec, n, rng), rng)


def _split_seeds(seed) -> list:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(3)


def generate(spec: SimulationSpec, rng_seed) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Training, validation and test sets (the test set holds ``spec.n_test`` draws)."""
    s_train, s_val, s_test = _split_seeds(rng_seed)
    gen = _Generator(spec)
    train = gen.draw(_draw_labels(spec, None, None), _rng(s_train))
    val = gen.draw(_draw_labels(spec, None, None), _rng(s_val))
    rng_t = _rng(s_test)
    test = gen.draw(_draw_labels(spec, spec.n_test, rng_t), rng_t)
    return train, val, test


def true_model(spec: SimulationSpec) -> CatchModel:
    """Classifier built from the generating parameters (the Bayes rule)."""
    cov = None
    if spec.has_covariates:
        gamma = np.linalg.solve(spec.psi, (spec.phi - spec.phi[0]).T).T
        cov = CovariateBlock(phi=spec.phi, psi=spec.psi, gamma=gamma)
    base = CatchModel(
        priors=spec.priors,
        mu=spec.means(),
        sigmas=spec.sigmas(),
        B=np.zeros((spec.K - 1,) + spec.shape),
        covariates=cov,
        alpha=spec.alpha(),
    )
    return with_coefficients(base, spec.coefficients())


def bayes_rule_error(spec: SimulationSpec, test: LabeledDataset) -> float:
    from .classifier import error_rate

    return error_rate(true_model(spec), test)


# --- two-class toy model with one covariate ------------------------------

def example1_model(alpha_scalar: float) -> CatchModel:
    """Two balanced classes, 2x2 identity-covariance tensor, one null covariate."""
    mu = np.zeros((2, 2, 2))
    mu[1, 0, 0] = 2.0
    alpha = np.zeros((2, 2, 1))
    alpha[0, 0, 0] = alpha[1, 0, 0] = alpha_scalar
    base = CatchModel(
        priors=np.array([0.5, 0.5]),
        mu=mu,
        sigmas=[np.eye(2), np.eye(2)],
        B=np.zeros((1, 2, 2)),
        covariates=CovariateBlock(phi=np.zeros((2, 1)), psi=np.eye(1), gamma=np.zeros((2, 1))),
        alpha=alpha,
    )
    return with_coefficients(base, mu[1:].copy())


def example1_rates(alpha_scalar: float) -> dict:
    """Closed-form best error rates for the two-class toy model."""
    a2 = float(alpha_scalar) ** 2
    return {
        "R(U)": 0.5,
        "R(X11,U)": float(norm.sf(1.0)),
        "R(X11)": float(norm.sf(1.0 / math.sqrt(1.0 + a2))),
        "R(X)": float(norm.sf(math.sqrt(2.0 + a2) / math.sqrt(2.0 + 2.0 * a2))),
    }


def example1_monte_carlo(alpha_scalar: float, n: int = 1_000_000, seed=0) -> float:
    """Empirical error of the Bayes rule on fresh toy-model draws."""
    from .classifier import predict

    rng = _rng(seed)
    Y = rng.integers(1, 3, size=n)
    U = rng.standard_normal(n)
    X = rng.standard_normal((2, 2, n))
    X[0, 0] += 2.0 * (Y == 2) + alpha_scalar * U
    X[1, 0] += alpha_scalar * U
    model = example1_model(alpha_scalar)
    return float(np.mean(predict(model, np.asfortranarray(X), U[:, None]) != Y))


# --- oracle classifiers ------------------------------------------------------

def tensor_oracle(base: CatchModel, true_set: Sequence[int]) -> CatchModel:
    """Unpenalized fit restricted to the true discriminative positions.

    Solves ``S_DD beta_D = delta_D`` with ``S_DD`` assembled entrywise from
    the estimated mode covariances.
    """
    D = np.asarray(true_set, dtype=np.int64) - 1
    shape = base.shape
    idx = np.unravel_index(D, shape, order="F")
    S_DD = np.ones((D.size, D.size))
    for m, sig in enumerate(base.sigmas):
        S_DD *= sig[np.ix_(idx[m], idx[m])]
    delta = np.stack([(base.mu[k] - base.mu[0]).ravel(order="F")[D] for k in range(1, base.K)])
    coef = np.linalg.solve(S_DD, delta.T).T
    B = np.zeros((base.K - 1, prod(shape)))
    B[:, D] = coef
    return with_coefficients(base, np.stack([b.reshape(shape, order="F") for b in B]), lam=0.0)


class VectorOracle:
    """Linear discriminant analysis on the true discriminative entries (and U)."""

    def __init__(self, train: LabeledDataset, true_set: Sequence[int]):
        self.D = np.asarray(true_set, dtype=np.int64) - 1
        self.use_u = train.U is not None
        Z = self._features(train.X, train.U)
        K, n = train.K, train.n
        Y = train.Y
        means = np.stack([Z[:, Y == k].mean(axis=1) for k in range(1, K + 1)], axis=1)
        C = Z - means[:, Y - 1]
        pooled = C @ C.T / (n - K)
        self.W = np.linalg.solve(pooled, means)  # (d, K)
        priors = np.bincount(Y, minlength=K + 1)[1:] / n
        self.b = np.log(priors) - 0.5 * np.einsum("dk,dk->k", means, self.W)

    def _features(self, X, U):
        n = X.shape[-1]
        Z = X.reshape(-1, n, order="F")[self.D]
        if self.use_u:
            Z = np.vstack([Z, np.asarray(U).T])
        return Z

    def predict(self, X, U=None) -> np.ndarray:
        s = self._features(X, U).T @ self.W + self.b
        return np.argmax(s, axis=1) + 1


# --- experiment harness ------------------------------------------------------

@dataclass
class MethodResult:
    method: str
    model: str
    errors: list = field(default_factory=list)
    tprs: list = field(default_factory=list)
    fprs: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    kkt_max: float = 0.0
    all_converged: bool = True
    all_monotone: bool = True

    @property
    def replicates(self) -> int:
        return len(self.errors)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def se(self) -> float:
        e = np.asarray(self.errors)
        return float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0

    @property
    def tpr(self) -> Optional[float]:
        return float(np.mean(self.tprs)) if self.tprs else None

    @property
    def fpr(self) -> Optional[float]:
        return float(np.mean(self.fprs)) if self.fprs else None

    def merge(self, other: "MethodResult"):
        self.errors += other.errors
        self.tprs += other.tprs
        self.fprs += other.fprs
        self.lambdas += other.lambdas
        self.kkt_max = max(self.kkt_max, other.kkt_max)
        self.all_converged &= other.all_converged
        self.all_monotone &= other.all_monotone


def _fit_tuned(train, val, config):
    fit = fit_catch(train, config)
    val_err = fit.path_errors(val)
    i = best_index(val_err)
    return fit, i


def _replicate(spec: SimulationSpec, methods: Sequence[str], seed_seq, config: SolverConfig,
               chunk: int) -> dict:
    s_train, s_val, s_test = _split_seeds(seed_seq)
    gen = _Generator(spec)
    train = gen.draw(_draw_labels(spec, None, None), _rng(s_train))
    val = gen.draw(_draw_labels(spec, None, None), _rng(s_val))
    out = {m: MethodResult(m, spec.name) for m in methods}
    predictors: dict[str, Callable] = {}
    true_set = spec.true_set()

    for m in methods:
        res = out[m]
        if m in ("catch", "catch_x"):
            tr, va = (train, val) if m == "catch" else (train.without_covariates(), val.without_covariates())
            fit, i = _fit_tuned(tr, va, config)
            model = fit.model(i)
            res.lambdas.append(float(fit.lambdas[i]))
            res.kkt_max = float(np.max(fit.path.kkt))
            res.all_converged = bool(np.all(fit.path.converged))
            res.all_monotone = bool(np.all(fit.path.monotone))
            sel = selection_metrics(model.selected(), true_set, spec.p)
            res.tprs.append(sel.tpr)
            res.fprs.append(sel.fpr)
            predictors[m] = _catch_predictor(model, use_u=(m == "catch"))
        elif m == "bayes":
            predictors[m] = _catch_predictor(true_model(spec), use_u=True)
        elif m == "tensor_oracle":
            from .estimation import estimate_parameters

            base = estimate_parameters(train, config.pd_gamma)
            predictors[m] = _catch_predictor(tensor_oracle(base, true_set), use_u=True)
        elif m == "vector_oracle":
            vo = VectorOracle(train, true_set)
            predictors[m] = vo.predict
        else:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")

    # stream the test set in chunks so large tensors never sit in memory at once
    rng_t = _rng(s_test)
    labels = _draw_labels(spec, spec.n_test, rng_t)
    wrong = {m: 0 for m in methods}
    for start in range(0, labels.size, chunk):
        part = gen.draw(labels[start:start + chunk], rng_t)
        for m, f in predictors.items():
            wrong[m] += int(np.sum(f(part.X, part.U) != part.Y))
    for m in methods:
        out[m].errors.append(wrong[m] / labels.size)
    return out


def _catch_predictor(model: CatchModel, use_u: bool):
    from .classifier import predict

    def f(X, U):
        return predict(model, X, U if (use_u and model.has_covariates) else None)

    return f


def _replicate_job(args):
    return _replicate(*args)


def run_experiment(spec: SimulationSpec | str, methods: Sequence[str] | str = ("catch",),
                   replicates: int = 100, rng_seed: int = 0, config: SolverConfig | None = None,
                   threads: int = 1, chunk: int = 1000) -> dict[str, MethodResult]:
    """Monte Carlo evaluation: generate, fit, tune on validation, score on test.

    All methods see the same data within a replicate.  Errors are fractions;
    ``threads > 1`` runs replicates in worker processes with results
    aggregated in replicate order.
    """
    if isinstance(spec, str):
        spec = get_spec(spec)
    if isinstance(methods, str):
        methods = (methods,)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    # the validation optimum sits far above the point where the fit selects
    # more positions than there are training observations
    config = config or SolverConfig(trace=True, max_selected=sum(spec.class_sizes))
    seeds = np.random.SeedSequence(rng_seed).spawn(replicates)
    jobs = [(spec, tuple(methods), s, config, chunk) for s in seeds]
    results = {m: MethodResult(m, spec.name) for m in methods}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_replicate_job, jobs))
    else:
        parts = []
        for r, job in enumerate(jobs):
            parts.append(_replicate_job(job))
            logger.info("%s replicate %d/%d done", spec.name, r + 1, replicates)
    for part in parts:
        for m in methods:
            results[m].merge(part[m])
    return results


# --- spec files ----------------------------------------------------------------

_COV_RE = re.compile(r"^\s*(identity|I|AR|CS)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$", re.IGNORECASE)


def _parse_box(text: str) -> tuple:
    modes = []
    for part in text.split("|"):
        idx = []
        for tok in part.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "-" in tok[1:]:
                lo, hi = tok.split("-", 1)
                idx.extend(range(int(lo), int(hi) + 1))
            else:
                idx.append(int(tok))
        modes.append(tuple(idx))
    return tuple(modes)


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def parse_spec_text(text: str) -> SimulationSpec:
    """Parse a ``key = value`` experiment file.

    ``model = NAME`` starts from a catalog entry; otherwise ``shape``, ``K``,
    ``class_sizes``, ``cov`` and at least one ``coef`` line are required.

    Keys::

        model = M1
        name = custom
        shape = 8, 8
        K = 2
        class_sizes = 75, 75
        cov = AR(0.7); identity          # one entry per mode
        coef = 1,2 | 1-3 : 0.6           # index box per mode : value per class 2..K
        phi = 0, 0; 0.3, 0.3             # one row per class (enables covariates)
        alpha = 1-5 | 1-5 | 1 : 0.5      # box over tensor modes and covariate index
        n_test = 10000
    """
    kv: dict[str, list[str]] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        kv.setdefault(key.lower(), []).append(value)

    def one(key, default=None):
        vals = kv.get(key)
        return vals[-1] if vals else default

    base = get_spec(one("model")) if "model" in kv else None
    fields: dict = {}
    if base is not None:
        fields = dict(name=base.name, shape=base.shape, K=base.K, class_sizes=base.class_sizes,
                      covs=base.covs, placements=base.placements, phi=base.phi, psi=base.psi,
                      alpha_box=base.alpha_box, alpha_value=base.alpha_value, n_test=base.n_test)
    if "name" in kv:
        fields["name"] = one("name")
    if "shape" in kv:
        fields["shape"] = tuple(int(t) for t in one("shape").split(","))
    if "k" in kv:
        fields["K"] = int(one("k"))
    if "class_sizes" in kv:
        fields["class_sizes"] = tuple(int(t) for t in one("class_sizes").split(","))
    if "cov" in kv:
        covs = []
        entries = [e for e in one("cov").split(";") if e.strip()]
        for e, p in zip(entries, fields["shape"]):
            m = _COV_RE.match(e)
            if not m:
                raise ValueError(f"bad covariance entry {e!r}")
            kind = "identity" if m.group(1).lower() in ("i", "identity") else m.group(1).upper()
            covs.append(CovSpec(kind, p, float(m.group(2) or 0.0)))
        if len(covs) != len(fields["shape"]):
            raise ValueError("need one covariance entry per mode")
        fields["covs"] = tuple(covs)
    if "coef" in kv:
        placements = []
        for entry in kv["coef"]:
            box, vals = entry.split(":", 1)
            placements.append((_parse_box(box), _floats(vals)))
        fields["placements"] = tuple(placements)
    if "phi" in kv:
        fields["phi"] = np.array([_floats(r) for r in one("phi").split(";") if r.strip()])
        fields.setdefault("psi", None)
    if "alpha" in kv:
        box, val = one("alpha").split(":", 1)
        fields["alpha_box"] = _parse_box(box)
        fields["alpha_value"] = float(val)
    if "n_test" in kv:
        fields["n_test"] = int(one("n_test"))
    fields.setdefault("name", "custom")
    missing = [k for k in ("shape", "K", "class_sizes", "covs", "placements") if k not in fields]
    if missing:
        raise ValueError(f"spec file is missing {', '.join(missing)}")
    if "covs" in fields and len(fields["covs"]) == len(fields["shape"]):
        fields["covs"] = tuple(CovSpec(c.kind, p, c.rho) for c, p in zip(fields["covs"], fields["shape"]))
    return SimulationSpec(**fields)
