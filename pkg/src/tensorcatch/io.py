"""On-disk formats for datasets, fitted models and predictions.

Datasets are a CTB tensor stacking observations along its last mode, an
optional headerless CSV of covariates (one row per observation) and a
one-column CSV of labels.  A fitted model is a directory of small CSV and
CTB files written with fixed formatting, so refitting the same data with the
same seed reproduces the files byte for byte.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .estimation import CatchModel, CovariateBlock, LabeledDataset
from .tensor import read_ctb, write_ctb

__all__ = [
    "read_matrix_csv",
    "write_matrix_csv",
    "read_labels",
    "load_dataset",
    "save_dataset",
    "save_model",
    "load_model",
    "write_predictions",
]

_FMT = "%.17g"


def read_matrix_csv(path, ncols: Optional[int] = None) -> np.ndarray:
    """Headerless numeric CSV as a 2-D array (an empty file gives zero rows)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or all(not c.strip() for c in rec):
                continue
            rows.append([float(c) for c in rec])
    if not rows:
        return np.zeros((0, ncols or 0))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows")
    out = np.asarray(rows, dtype=np.float64)
    if ncols is not None and out.shape[1] != ncols:
        raise ValueError(f"{path}: expected {ncols} columns, found {out.shape[1]}")
    return out


def write_matrix_csv(path, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        for row in arr:
            fh.write(",".join(_FMT % v for v in row) + "\n")


def read_labels(path) -> np.ndarray:
    m = read_matrix_csv(path)
    if m.size and m.shape[1] != 1:
        raise ValueError(f"{path}: labels file must have one column")
    y = m.ravel()
    if np.any(y != np.round(y)):
        raise ValueError(f"{path}: labels must be integers")
    return y.astype(np.int64)


def load_dataset(x_path, y_path=None, u_path=None, K: Optional[int] = None):
    """Read X (and Y, U when given).  Returns ``(X, Y, U)`` arrays; Y and U may be None."""
    X = read_ctb(x_path)
    n = X.shape[-1]
    U = None
    if u_path is not None:
        U = read_matrix_csv(u_path)
        if U.shape[0] != n:
            raise ValueError(f"{u_path}: {U.shape[0]} rows for {n} observations")
    Y = None
    if y_path is not None:
        Y = read_labels(y_path)
        if Y.size != n:
            raise ValueError(f"{y_path}: {Y.size} labels for {n} observations")
    return X, Y, U


def save_dataset(data: LabeledDataset, x_path, y_path, u_path=None) -> None:
    write_ctb(x_path, data.X)
    write_matrix_csv(y_path, data.Y[:, None])
    if u_path is not None and data.U is not None:
        write_matrix_csv(u_path, data.U)


def save_model(model: CatchModel, directory) -> None:
    """Write every parameter of a fitted model to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "priors.csv", model.priors[:, None])
    for k in range(model.K):
        write_ctb(d / f"mu_{k + 1}.ctb", model.mu[k])
    for m, sig in enumerate(model.sigmas):
        write_matrix_csv(d / f"sigma_{m + 1}.csv", sig)
    for k in range(model.K - 1):
        write_ctb(d / f"B_{k + 2}.ctb", model.B[k])
    if model.intercepts is not None:
        write_matrix_csv(d / "intercepts.csv", np.asarray(model.intercepts)[:, None])
    if model.has_covariates:
        cov = model.covariates
        write_matrix_csv(d / "phi.csv", cov.phi)
        write_matrix_csv(d / "psi.csv", cov.psi)
        write_matrix_csv(d / "gamma.csv", cov.gamma)
        write_ctb(d / "alpha.ctb", model.alpha)
    meta = {"K": model.K, "order": len(model.shape), "lambda": model.lam}
    with open(d / "meta.txt", "w") as fh:
        for key, val in meta.items():
            fh.write(f"{key}={'' if val is None else (_FMT % val if isinstance(val, float) else val)}\n")


def load_model(directory) -> CatchModel:
    d = Path(directory)
    if not (d / "priors.csv").exists():
        raise FileNotFoundError(f"{d}: not a model directory (priors.csv missing)")
    meta = {}
    if (d / "meta.txt").exists():
        for line in (d / "meta.txt").read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
    priors = read_matrix_csv(d / "priors.csv").ravel()
    K = priors.size
    mu = np.stack([read_ctb(d / f"mu_{k + 1}.ctb") for k in range(K)])
    order = mu.ndim - 1
    sigmas = [read_matrix_csv(d / f"sigma_{m + 1}.csv") for m in range(order)]
    B = np.stack([read_ctb(d / f"B_{k + 2}.ctb") for k in range(K - 1)]) if K > 1 \
        else np.zeros((0,) + mu.shape[1:])
    cov = alpha = None
    if (d / "phi.csv").exists():
        cov = CovariateBlock(
            phi=read_matrix_csv(d / "phi.csv"),
            psi=read_matrix_csv(d / "psi.csv"),
            gamma=read_matrix_csv(d / "gamma.csv"),
        )
        alpha = read_ctb(d / "alpha.ctb")
    a = read_matrix_csv(d / "intercepts.csv").ravel() if (d / "intercepts.csv").exists() else None
    lam = float(meta["lambda"]) if meta.get("lambda") else None
    model = CatchModel(priors=priors, mu=mu, sigmas=sigmas, B=B, covariates=cov, alpha=alpha,
                       intercepts=a, lam=lam)
    if a is None:
        from .classifier import intercepts

        model.intercepts = intercepts(model)
    return model


def write_predictions(path, labels, scores) -> None:
    """CSV with ``index,label,score_1..score_K``; zero rows still get a header."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    K = scores.shape[1] if scores.ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["index", "label"] + [f"score_{k + 1}" for k in range(K)]) + "\n")
        for i, (lab, row) in enumerate(zip(labels, scores)):
            fh.write(",".join([str(i + 1), str(int(lab))] + [_FMT % v for v in row]) + "\n")


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
