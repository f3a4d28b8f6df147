"""Input validation helpers shared by the estimators and the eval engine."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

__all__ = [
    "as_float_matrix",
    "as_float_vector",
    "as_binary_labels",
    "as_probabilities",
    "check_consistent_length",
]


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_float_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_binary_labels(y, name: str = "y") -> np.ndarray:
    """Coerce to an int array of 0/1 labels."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    out = arr.astype(np.int64, copy=True)
    if not np.array_equal(out, np.asarray(arr, dtype=np.float64)):
        raise DataError(f"{name} must contain integer labels")
    if not np.all((out == 0) | (out == 1)):
        raise DataError(f"{name} must contain only 0/1 labels")
    return out


def as_probabilities(p, name: str = "probabilities") -> np.ndarray:
    arr = as_float_vector(p, name)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DataError(f"{name} must lie in [0, 1]")
    return arr


def check_consistent_length(**named_arrays) -> None:
    lengths = {name: len(arr) for name, arr in named_arrays.items()}
    if len(set(lengths.values())) > 1:
        detail = ", ".join(f"{k}={v}" for k, v in lengths.items())
        raise ShapeError(f"length mismatch: {detail}")
