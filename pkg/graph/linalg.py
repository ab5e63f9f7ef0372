"""
Dense matrix arithmetic and sparse-dense products.

DenseMatrix is a C-contiguous float64 numpy array; SparseMatrix is a
scipy.sparse.csr_array. Every public operation checks shapes up front and
guarantees finite output for finite input.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

DenseMatrix = np.ndarray
SparseMatrix = sp.csr_array

ELEMENTWISE_OPS = ("add", "sub", "scale", "hadamard", "relu", "relu_mask")


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_dense(a) -> DenseMatrix:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(1, -1)
    if out.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {out.ndim} dimensions")
    return out


def as_sparse(s) -> SparseMatrix:
    out = sp.csr_array(s, dtype=np.float64)
    out.sort_indices()
    return out


def densify(s: SparseMatrix) -> DenseMatrix:
    return np.ascontiguousarray(s.toarray(), dtype=np.float64)


def spmm(s: SparseMatrix, d: DenseMatrix) -> DenseMatrix:
    """Exact sparse-dense product s @ d; rows of s are accumulated in index order."""
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {s.shape} @ {d.shape}")
    return np.ascontiguousarray(s @ d, dtype=np.float64)


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return np.ascontiguousarray(a @ b)


def _broadcastable(a: DenseMatrix, b: DenseMatrix) -> bool:
    if a.shape == b.shape:
        return True
    # only a 1×cols row vector may be broadcast over the rows of a
    return b.ndim == 2 and b.shape[0] == 1 and b.shape[1] == a.shape[1]


def elementwise(op: str, a: DenseMatrix, b: Optional[DenseMatrix | float] = None) -> DenseMatrix:
    """
    add / sub / hadamard take a matrix (or row vector) b; scale takes a scalar b;
    relu ignores b; relu_mask returns the 0/1 mask of a > 0.
    """
    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {ELEMENTWISE_OPS}")
    if op == "relu":
        return np.maximum(a, 0.0)
    if op == "relu_mask":
        return (a > 0).astype(np.float64)
    if op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar operand")
        return a * float(b)

    if b is None:
        raise ShapeError(f"{op} expects a second operand")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b.reshape(1, -1)
    if not _broadcastable(a, b):
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    return a * b


def mean_abs(a: DenseMatrix) -> float:
    """Average absolute entry; 0 for an empty matrix."""
    if a.size == 0:
        return 0.0
    return float(np.abs(a).mean())


def all_finite(a) -> bool:
    data = a.data if sp.issparse(a) else a
    return bool(np.all(np.isfinite(data)))
