"""Small input-validation helpers used across the public API."""

from __future__ import annotations

import numpy as np

from .errors import DataError, UsageError


def as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise UsageError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise UsageError(f"{name} must have length {dim}, got {arr.shape[0]}")
    return arr


def as_matrix(x, shape: tuple[int | None, int | None] = (None, None), name: str = "x") -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally checking each dimension."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError(f"{name} must be 2-D, got shape {arr.shape}")
    for axis, want in enumerate(shape):
        if want is not None and arr.shape[axis] != want:
            raise UsageError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_index(value: int, bound: int, name: str) -> int:
    value = int(value)
    if not 0 <= value < bound:
        raise UsageError(f"{name}={value} out of range [0, {bound})")
    return value


def check_positive(value, name: str):
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")
    return value


def check_probabilities(p, name: str = "probs", tol: float = 1e-6) -> np.ndarray:
    """Validate a probability vector: nonnegative entries summing to 1."""
    arr = as_vector(p, name=name)
    if arr.size == 0:
        raise UsageError(f"{name} must be non-empty")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} has negative or non-finite entries")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise UsageError(f"{name} must sum to 1 (got {total!r})")
    return arr
