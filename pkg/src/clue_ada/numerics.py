"""Dense float64 matrix primitives shared by every other module.

All public functions operate on numpy arrays (row-major, float64) and are
pure: inputs are never mutated, outputs are freshly allocated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_matrix",
    "as_vector",
    "squared_euclidean",
    "pairwise_sq_dists",
    "softmax_rows",
]


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a 2-D float64 array.

    Rejects non-finite entries and, when given, shape mismatches.
    """
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def as_vector(data, length: int | None = None) -> np.ndarray:
    """Validate and return a 1-D float64 array with finite entries."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got ndim={v.ndim}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"expected length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def squared_euclidean(a, b) -> float:
    """Squared Euclidean distance between two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(np.dot(d, d))


def pairwise_sq_dists(points, centers) -> np.ndarray:
    """All squared distances between row vectors of `points` and `centers`.

    Returns an (n_points, n_centers) matrix; entry [i, j] equals
    squared_euclidean(points[i], centers[j]).
    """
    p = as_matrix(points)
    c = as_matrix(centers)
    if p.shape[1] != c.shape[1]:
        raise ValueError(f"dimension mismatch: {p.shape[1]} vs {c.shape[1]}")
    # Explicit differencing, not the norm-expansion trick: the expansion
    # loses digits when points sit far from the origin.
    diff = p[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def softmax_rows(logits, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of `logits / temperature`.

    Uses per-row max subtraction so low temperatures cannot overflow.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = as_matrix(logits) / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
