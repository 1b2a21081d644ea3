"""Input validation helpers shared across the package.

All helpers raise ValueError with the offending operand named, so callers
can surface actionable messages without re-checking shapes themselves.
"""

from __future__ import annotations

import numpy as np


def check_vector(x, name, size=None, dtype=float):
    """Coerce to a 1-d float array, checking size and finiteness."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matrix(x, name, shape=None):
    """Coerce to a 2-d float array, checking shape and finiteness."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if shape is not None:
        want_rows, want_cols = shape
        if want_rows is not None and arr.shape[0] != want_rows:
            raise ValueError(
                f"{name} must have {want_rows} rows, got {arr.shape[0]}"
            )
        if want_cols is not None and arr.shape[1] != want_cols:
            raise ValueError(
                f"{name} must have {want_cols} columns, got {arr.shape[1]}"
            )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_rank(r, d1, d2, name="rank"):
    """Validate a factorization rank against the ambient dimensions."""
    r = check_positive_int(r, name)
    cap = min(d1, d2)
    if r > cap:
        raise ValueError(f"{name} must be <= min(d1, d2) = {cap}, got {r}")
    return r
