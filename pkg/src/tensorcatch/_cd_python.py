"""Pure-Python block coordinate sweep (fallback when the compiled kernel is absent).

Same contract as ``_cd_kernel.sweep``; see :mod:`tensorcatch.solver`.
"""
import numpy as np


def kron_column(j, dims, sig_flat, sig_off):
    """Column ``j`` (0-based) of ``Sigma_M kron ... kron Sigma_1`` without forming it."""
    col = np.ones(1)
    rem = j
    for m in range(dims.size):
        p = dims[m]
        jm = rem % p
        rem //= p
        start = sig_off[m] + jm * p
        row = sig_flat[start:start + p]
        col = np.multiply.outer(row, col).ravel()
    return col


def sweep(coords, dims, sig_flat, sig_off, diag, delta, beta, grad, lam, colbuf):
    """One pass of exact block updates over ``coords``.

    ``grad`` holds ``beta @ Sigma`` row-wise and is kept in sync.  Returns the
    largest absolute coefficient change.
    """
    max_change = 0.0
    for j in coords:
        sjj = diag[j]
        bj = beta[:, j]
        r = delta[:, j] - grad[:, j] + sjj * bj
        norm = np.sqrt((r * r).sum())
        thr = lam
        if norm <= thr:
            new = np.zeros_like(bj)
        else:
            new = r * ((1.0 - thr / norm) / sjj)
        d = new - bj
        if not d.any():
            continue
        change = np.abs(d).max()
        if change > max_change:
            max_change = change
        beta[:, j] = new
        col = kron_column(j, dims, sig_flat, sig_off)
        grad += np.outer(d, col)
    return max_change
