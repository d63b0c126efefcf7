"""Small dense linear-algebra layer over float64 numpy arrays.

Vectors are 1-D and matrices 2-D C-contiguous ``float64`` arrays. Every
matrix-vector product goes through :func:`matvec` or :func:`matvec_rows`,
which reduce each row with the same per-row summation, so the dense and the
row-sparse paths give bit-identical results for the rows they share.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class MacCounter:
    """Accumulates multiply-accumulate counts, split by kind."""

    def __init__(self) -> None:
        self.matvec = 0
        self.elementwise = 0

    @property
    def total(self) -> int:
        return self.matvec + self.elementwise

    def reset(self) -> None:
        self.matvec = 0
        self.elementwise = 0

    def __repr__(self) -> str:
        return f"MacCounter(matvec={self.matvec}, elementwise={self.elementwise})"


def vector(values: ArrayLike) -> Vector:
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def matrix(values: ArrayLike) -> Matrix:
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matvec(m: Matrix, v: Vector, counter: MacCounter | None = None) -> Vector:
    """Dense product ``m @ v`` with a fixed per-row reduction."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec shape mismatch: matrix {m.shape} vs vector {v.shape}")
    if counter is not None:
        counter.matvec += m.shape[0] * m.shape[1]
    return (m * v).sum(axis=1)


def matvec_rows(
    m: Matrix,
    v: Vector,
    rows: Sequence[int] | NDArray[np.intp],
    counter: MacCounter | None = None,
) -> Vector:
    """Compute only the requested rows of ``m @ v``.

    ``rows`` must be strictly increasing and in range. The result has one
    entry per requested row, in the same order, and each entry is bit-identical
    to the matching entry of :func:`matvec`. Exactly ``len(rows) * m.shape[1]``
    MACs are charged to ``counter``.
    """
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec shape mismatch: matrix {m.shape} vs vector {v.shape}")
    idx = np.asarray(rows, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"row index set must be 1-D, got shape {idx.shape}")
    if idx.size:
        bad = idx[(idx < 0) | (idx >= m.shape[0])]
        if bad.size:
            raise IndexError(f"row index {int(bad[0])} out of range for matrix with {m.shape[0]} rows")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("row indices must be strictly increasing")
    if counter is not None:
        counter.matvec += idx.size * m.shape[1]
    return (m[idx] * v).sum(axis=1)


def _check_same_length(a: Vector, b: Vector, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: length mismatch {a.shape} vs {b.shape}")


def sigmoid(v: Vector) -> Vector:
    # Split by sign so exp never overflows.
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v: Vector) -> Vector:
    return np.tanh(np.asarray(v, dtype=np.float64))


def hadamard(a: Vector, b: Vector, counter: MacCounter | None = None) -> Vector:
    _check_same_length(a, b, "hadamard")
    if counter is not None:
        counter.elementwise += a.size
    return a * b


def add(a: Vector, b: Vector) -> Vector:
    _check_same_length(a, b, "add")
    return a + b


def axpy(alpha: float, x: Vector, y: Vector) -> Vector:
    """Return ``alpha * x + y``."""
    _check_same_length(x, y, "axpy")
    return alpha * x + y


def scale(alpha: float, x: Vector) -> Vector:
    return alpha * np.asarray(x, dtype=np.float64)
