"""Small numeric helpers shared across modules."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Levels such as 0.3 times 10 land just above an integer in binary floating
# point; ranks are computed against a slightly shrunk level so the 1-based
# order statistic matches exact decimal arithmetic.
RANK_EPS = 1e-10


@njit(cache=True, nogil=True)
def ceil_rank(tau, n):
    """1-based rank ``max(1, ceil(n * tau))`` with decimal-friendly rounding."""
    r = int(np.ceil(n * (tau - RANK_EPS)))
    if r < 1:
        return 1
    return r


def ceil_rank_py(tau: float, n: int) -> int:
    """Pure Python twin of :func:`ceil_rank` for scalar call sites."""
    return max(1, math.ceil(n * (tau - RANK_EPS)))


def as_1d_float(values, name: str = "y") -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_nonempty(arr: np.ndarray, name: str = "y") -> None:
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must be nonempty")
