# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled block coordinate sweep.  Mirrors ``_cd_python.sweep`` exactly."""
from libc.math cimport sqrt, fabs


cdef void _build_column(Py_ssize_t j, const long[:] dims, const double[:] sig_flat,
                        const long[:] sig_off, double[:] col) noexcept nogil:
    cdef Py_ssize_t m, i, t, p, jm, start, length = 1
    cdef Py_ssize_t rem = j
    cdef double w
    col[0] = 1.0
    for m in range(dims.shape[0]):
        p = dims[m]
        jm = rem % p
        rem = rem // p
        start = sig_off[m] + jm * p
        # expand in place; block i=0 last so its source is still intact
        i = p - 1
        while i >= 0:
            w = sig_flat[start + i]
            for t in range(length):
                col[i * length + t] = w * col[t]
            i -= 1
        length *= p


def kron_column(Py_ssize_t j, const long[:] dims, const double[:] sig_flat, const long[:] sig_off):
    import numpy as np
    cdef Py_ssize_t total = 1, m
    for m in range(dims.shape[0]):
        total *= dims[m]
    out = np.empty(total)
    cdef double[:] col = out
    _build_column(j, dims, sig_flat, sig_off, col)
    return out


def sweep(const long[:] coords, const long[:] dims, const double[:] sig_flat,
          const long[:] sig_off, const double[:] diag, const double[:, :] delta,
          double[:, :] beta, double[:, :] grad, double lam, double[:] colbuf):
    cdef Py_ssize_t nk = beta.shape[0]
    cdef Py_ssize_t p = beta.shape[1]
    cdef Py_ssize_t c, j, k, i
    cdef double sjj, norm, scale, thr = lam
    cdef double max_change = 0.0, ch
    cdef double r[64]
    cdef double d[64]
    cdef double nb[64]
    cdef bint moved
    if nk > 64:
        raise ValueError("at most 65 classes supported by the compiled kernel")
    with nogil:
        for c in range(coords.shape[0]):
            j = coords[c]
            sjj = diag[j]
            norm = 0.0
            for k in range(nk):
                r[k] = delta[k, j] - grad[k, j] + sjj * beta[k, j]
                norm += r[k] * r[k]
            norm = sqrt(norm)
            if norm <= thr:
                scale = 0.0
            else:
                scale = (1.0 - thr / norm) / sjj
            moved = False
            for k in range(nk):
                nb[k] = r[k] * scale
                d[k] = nb[k] - beta[k, j]
                if d[k] != 0.0:
                    moved = True
            if not moved:
                continue
            for k in range(nk):
                ch = fabs(d[k])
                if ch > max_change:
                    max_change = ch
                beta[k, j] = nb[k]
            _build_column(j, dims, sig_flat, sig_off, colbuf)
            for k in range(nk):
                if d[k] != 0.0:
                    for i in range(p):
                        grad[k, i] += d[k] * colbuf[i]
    return max_change
