"""Dense M-way tensors and the multilinear operations used by the estimator.

Arrays are plain :class:`numpy.ndarray` objects indexed ``a[i1, ..., iM]``
(0-based).  The vectorization runs with the first index fastest, which is
numpy's Fortran (column-major) order, so ``vec(a) == a.ravel(order="F")``.

Public index helpers (:func:`linear_to_multi_index`,
:func:`multi_to_linear`) and mode arguments are 1-based to match the usual
mathematical notation.
"""
from __future__ import annotations

import struct
from math import prod
from os import PathLike
from typing import Sequence, Union

import numpy as np

__all__ = [
    "DenseTensor",
    "vec",
    "unvec",
    "mode_matricize",
    "mode_fold",
    "mode_product",
    "mode_vector_product",
    "tucker",
    "inner",
    "linear_to_multi_index",
    "multi_to_linear",
    "write_ctb",
    "read_ctb",
    "CTBFormatError",
]

CTB_MAGIC = b"CTB1"

ArrayLike = Union[np.ndarray, "DenseTensor"]


class CTBFormatError(ValueError):
    """Raised when a CTB payload is malformed or truncated."""


class DenseTensor:
    """Immutable M-way real tensor with a fixed column-major linearization.

    Parameters
    ----------
    data : array_like
        Either an M-way array (``shape`` omitted) or a flat vector in vec
        order (``shape`` given).
    shape : sequence of int, optional
        Mode sizes ``(p_1, ..., p_M)``.
    """

    __slots__ = ("_array",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            _check_shape(shape)
            if arr.size != prod(shape):
                raise ValueError(
                    f"data has {arr.size} elements, shape {shape} needs {prod(shape)}"
                )
            arr = arr.reshape(shape, order="F")
        else:
            if arr.ndim == 0:
                raise ValueError("a tensor needs at least one mode")
            _check_shape(arr.shape)
        arr = np.asfortranarray(arr).copy(order="F")
        arr.flags.writeable = False
        self._array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def order(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def array(self) -> np.ndarray:
        """Read-only M-way view (0-based indexing)."""
        return self._array

    def vec(self) -> np.ndarray:
        return vec(self._array)

    def __getitem__(self, index):
        """Element access with a 1-based multi-index, e.g. ``t[1, 2, 1]``."""
        if not isinstance(index, tuple):
            index = (index,)
        if len(index) != self.order:
            raise IndexError(f"expected {self.order} indices, got {len(index)}")
        zero = []
        for i, p in zip(index, self.shape):
            if not 1 <= i <= p:
                raise IndexError(f"index {index} out of range for shape {self.shape}")
            zero.append(i - 1)
        return float(self._array[tuple(zero)])

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    __hash__ = None

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


def _check_shape(shape):
    if len(shape) == 0:
        raise ValueError("a tensor needs at least one mode")
    for s in shape:
        if int(s) < 1:
            raise ValueError(f"all dims must be >= 1, got {tuple(shape)}")
    if prod(int(s) for s in shape) >= 2**63:
        raise ValueError("element count overflows a 64-bit index")


def _as_array(t: ArrayLike) -> np.ndarray:
    return np.asarray(t, dtype=np.float64)


def _check_mode(k: int, order: int):
    if not 1 <= k <= order:
        raise ValueError(f"mode {k} out of range for an order-{order} tensor")


def vec(t: ArrayLike) -> np.ndarray:
    """Column-major vectorization; index 1 runs fastest."""
    return _as_array(t).ravel(order="F")


def unvec(v, shape: Sequence[int]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size != prod(shape):
        raise ValueError(f"vector of length {v.size} does not fit shape {tuple(shape)}")
    return v.reshape(tuple(shape), order="F")


def mode_matricize(t: ArrayLike, k: int) -> np.ndarray:
    """Mode-k unfolding, a ``p_k x prod(p_m, m != k)`` matrix."""
    a = _as_array(t)
    _check_mode(k, a.ndim)
    return np.moveaxis(a, k - 1, 0).reshape(a.shape[k - 1], -1, order="F")


def mode_fold(mat: np.ndarray, k: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`mode_matricize` for a tensor of the given shape."""
    shape = tuple(shape)
    _check_mode(k, len(shape))
    moved = (shape[k - 1],) + shape[: k - 1] + shape[k:]
    return np.moveaxis(np.reshape(mat, moved, order="F"), 0, k - 1)


def mode_product(t: ArrayLike, k: int, m) -> np.ndarray:
    """Mode-k product ``t x_k m`` for a ``d x p_k`` matrix ``m``."""
    a = _as_array(t)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(k, a.ndim)
    if m.ndim != 2 or m.shape[1] != a.shape[k - 1]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot multiply mode {k} of size {a.shape[k - 1]}"
        )
    out_shape = a.shape[: k - 1] + (m.shape[0],) + a.shape[k:]
    return mode_fold(m @ mode_matricize(a, k), k, out_shape)


def mode_vector_product(t: ArrayLike, k: int, v) -> np.ndarray:
    """Contract mode k against a vector; the result has order M-1."""
    a = _as_array(t)
    v = np.asarray(v, dtype=np.float64)
    _check_mode(k, a.ndim)
    if v.shape != (a.shape[k - 1],):
        raise ValueError(f"vector length {v.shape} does not match mode {k} size {a.shape[k - 1]}")
    return np.tensordot(a, v, axes=([k - 1], [0]))


def tucker(core: ArrayLike, factors: Sequence) -> np.ndarray:
    """``[[core; G_1, ..., G_M]]``.  ``None`` entries stand for identity factors."""
    out = _as_array(core)
    if len(factors) != out.ndim:
        raise ValueError(f"need {out.ndim} factors, got {len(factors)}")
    for k, g in enumerate(factors, start=1):
        if g is None:
            continue
        out = mode_product(out, k, g)
    return out


def inner(a: ArrayLike, b: ArrayLike) -> float:
    """Sum of elementwise products of two same-shape tensors."""
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.vdot(vec(a), vec(b)))


def linear_to_multi_index(j: int, shape: Sequence[int]) -> tuple[int, ...]:
    """Map a 1-based vec position to a 1-based multi-index.

    Follows the modular recursion ``s_{M+1} = j``,
    ``s_m = s_{m+1} mod prod(p_1..p_{m-1})`` (with ``a mod b = b`` when the
    remainder is zero), ``j_1 = s_2 mod p_1`` and
    ``j_m = ceil(s_{m+1} / prod(p_1..p_{m-1}))``.
    """
    shape = tuple(int(p) for p in shape)
    total = prod(shape)
    j = int(j)
    if not 1 <= j <= total:
        raise IndexError(f"linear index {j} out of range 1..{total}")

    def mod1(a, b):
        r = a % b
        return b if r == 0 else r

    M = len(shape)
    strides = [prod(shape[:m]) for m in range(M)]  # prod(p_1..p_m) for m = 0..M-1
    s = [0] * (M + 2)
    s[M + 1] = j
    for m in range(M, 1, -1):
        s[m] = mod1(s[m + 1], strides[m - 1])
    out = [0] * M
    out[0] = mod1(s[2] if M > 1 else j, shape[0])
    for m in range(2, M + 1):
        out[m - 1] = -(-s[m + 1] // strides[m - 1])
    return tuple(out)


def multi_to_linear(index: Sequence[int], shape: Sequence[int]) -> int:
    """1-based vec position of a 1-based multi-index."""
    shape = tuple(int(p) for p in shape)
    if len(index) != len(shape):
        raise IndexError(f"expected {len(shape)} indices, got {len(index)}")
    j, stride = 1, 1
    for i, p in zip(index, shape):
        if not 1 <= i <= p:
            raise IndexError(f"index {tuple(index)} out of range for shape {shape}")
        j += (i - 1) * stride
        stride *= p
    return j


def write_ctb(path: str | PathLike, t: ArrayLike) -> None:
    """Write a tensor in the CTB binary layout.

    Layout: ``b"CTB1"``, one unsigned byte holding the order, that many
    little-endian u64 dims, then the f64 values in vec order.
    """
    a = _as_array(t)
    if a.ndim > 255:
        raise ValueError("CTB supports at most 255 modes")
    header = CTB_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    payload = np.ascontiguousarray(vec(a), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_ctb(path: str | PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CTB_MAGIC:
        raise CTBFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 5:
        raise CTBFormatError(f"{path}: truncated header")
    order = raw[4]
    end = 5 + 8 * order
    if len(raw) < end:
        raise CTBFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{order}Q", raw[5:end])
    count = prod(dims)
    if len(raw) != end + 8 * count:
        raise CTBFormatError(
            f"{path}: expected {count} values, payload holds {(len(raw) - end) / 8:g}"
        )
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=end).astype(np.float64)
    return values.reshape(dims, order="F")
