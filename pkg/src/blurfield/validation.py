"""Input validation helpers.

Small check_* utilities used at public API boundaries, in the spirit of
sklearn's validation module: normalize inputs early, fail with a clear
message instead of propagating shape errors from deep inside numpy.
"""

from __future__ import annotations

import numpy as np


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf values")
    return arr


def check_odd(name: str, n: int) -> int:
    n = int(n)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"{name} must be a positive odd integer, got {n}")
    return n


def check_positive(name: str, x: float) -> float:
    if not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x


def check_in_range(name: str, x: float, lo: float, hi: float) -> float:
    if not (lo <= x <= hi):
        raise ValueError(f"{name} must be in [{lo}, {hi}], got {x}")
    return x


def check_same_shape(name_a: str, a: np.ndarray, name_b: str, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"{name_a} and {name_b} must have identical shapes, "
            f"got {np.shape(a)} vs {np.shape(b)}"
        )


def as_float_array(name: str, arr, dtype=np.float64) -> np.ndarray:
    """Coerce to a finite float ndarray of the requested dtype."""
    out = np.asarray(arr, dtype=dtype)
    return check_finite(name, out)


def check_points_2d(name: str, pts) -> np.ndarray:
    """Coerce to an (N, 2) float64 array of finite 2D points."""
    out = np.asarray(pts, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {out.shape}")
    return check_finite(name, out)
