"""Pinball and weighted interval score losses and their empirical entropies.

The prefix scan keeps ``M + 1`` summing min-max heaps. After ``s`` values
have been pushed, heap ``m`` (0-based) holds the order statistics with ranks
``c_{m-1} + 1 .. c_m`` where ``c_m = ceil(tau_m * s)``; the last heap holds
the rest. The quantile at level ``tau_m`` is then the largest value in the
highest nonempty heap at or below ``m``, and the per-heap sums give the
entropy in O(M) per step.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit

from ._util import as_1d_float, ceil_rank, ceil_rank_py, check_nonempty
from .ordered import (
    mmh_max,
    mmh_min,
    mmh_pop_max,
    mmh_pop_min,
    mmh_push,
    mmh_second_max,
)

__all__ = [
    "pinball_loss",
    "empirical_quantile",
    "pinball_entropy",
    "loo_pinball_entropy",
    "check_levels",
    "symmetric_levels",
    "wis_loss",
    "wis_entropy",
    "QuantileHeapBank",
    "prefix_entropies_multiq",
]


def pinball_loss(xi, tau: float):
    """Pinball loss ``(tau - 1{xi < 0}) * xi``; works elementwise on arrays."""
    xi = np.asarray(xi, dtype=np.float64)
    out = np.where(xi < 0, (tau - 1.0) * xi, tau * xi)
    return float(out) if out.ndim == 0 else out


def check_levels(levels: Sequence[float]) -> np.ndarray:
    """Validate quantile levels: nonempty, strictly increasing, inside (0, 1)."""
    arr = np.asarray(levels, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("at least one quantile level is required")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("quantile levels must lie strictly between 0 and 1")
    if np.any(np.diff(arr) <= 0.0):
        raise ValueError("quantile levels must be strictly increasing")
    return arr


def symmetric_levels(levels: Sequence[float]) -> np.ndarray:
    """Expand ``tau_1 < ... < tau_M < 1/2`` to the 2M+1 symmetric WIS levels."""
    lv = check_levels(levels)
    if lv[-1] >= 0.5:
        raise ValueError("WIS base levels must all be below 0.5")
    return np.concatenate([lv, [0.5], 1.0 - lv[::-1]])


def empirical_quantile(y, tau: float) -> float:
    """The ``ceil(tau * n)``-th smallest entry of ``y`` (1-based)."""
    y = as_1d_float(y)
    check_nonempty(y)
    k = ceil_rank_py(tau, y.shape[0])
    return float(np.partition(y, k - 1)[k - 1])


@njit(cache=True, nogil=True)
def _split_entropy(q, c, n, sum_low, total, tau):
    """Mean pinball loss around ``q = y_(c)`` given the sum of the ``c`` lowest values.

    Written as the two one-sided deviation sums so that each term is
    nonnegative and vanishes exactly on constant data.
    """
    below = c * q - sum_low
    above = (total - sum_low) - (n - c) * q
    if below < 0.0:
        below = 0.0
    if above < 0.0:
        above = 0.0
    return (tau * above + (1.0 - tau) * below) / n


def _entropy_sorted(ys: np.ndarray, prefix: np.ndarray, tau: float) -> float:
    n = ys.shape[0]
    c = ceil_rank_py(tau, n)
    return float(_split_entropy(ys[c - 1], c, n, prefix[c], prefix[n], tau))


def pinball_entropy(y, tau: float) -> float:
    """Mean pinball loss of ``y`` around its own empirical ``tau``-quantile."""
    y = as_1d_float(y)
    check_nonempty(y)
    ys = np.sort(y)
    prefix = np.concatenate([[0.0], np.cumsum(ys)])
    return _entropy_sorted(ys, prefix, tau)


def _loo_sorted(ys: np.ndarray, prefix: np.ndarray, tau: float) -> float:
    n = ys.shape[0]
    h = _entropy_sorted(ys, prefix, tau)
    r = ceil_rank_py(tau, n)
    if ceil_rank_py(tau, n - 1) == r:
        return h + (1.0 - tau) * r * (ys[r] - ys[r - 1]) / n
    return h + tau * (n - r + 1) * (ys[r - 1] - ys[r - 2]) / n


def loo_pinball_entropy(y, tau: float) -> float:
    """Leave-one-out pinball entropy in O(n log n).

    Each point is scored against the empirical quantile of the other
    ``n - 1`` points. Removing a point shifts the quantile by at most one
    order statistic, so the sum differs from the plain entropy by a single
    gap term.
    """
    y = as_1d_float(y)
    if y.shape[0] < 2:
        raise ValueError("leave-one-out entropy needs at least two points")
    ys = np.sort(y)
    prefix = np.concatenate([[0.0], np.cumsum(ys)])
    return _loo_sorted(ys, prefix, tau)


def wis_loss(quantiles, y: float, levels: Sequence[float]) -> float:
    """Weighted interval score of ``quantiles`` at the symmetric level set.

    ``quantiles`` must hold 2M+1 values aligned with
    ``symmetric_levels(levels)``.
    """
    full = symmetric_levels(levels)
    q = np.asarray(quantiles, dtype=np.float64).ravel()
    if q.shape[0] != full.shape[0]:
        raise ValueError(f"expected {full.shape[0]} quantiles, got {q.shape[0]}")
    return float(2.0 / full.shape[0] * np.sum(_pinball_vec(y - q, full)))


def _pinball_vec(xi: np.ndarray, taus: np.ndarray) -> np.ndarray:
    return np.where(xi < 0, (taus - 1.0) * xi, taus * xi)


def wis_entropy(y, levels: Sequence[float]) -> float:
    """Empirical WIS entropy: scaled sum of pinball entropies over symmetric levels."""
    full = symmetric_levels(levels)
    y = as_1d_float(y)
    check_nonempty(y)
    ys = np.sort(y)
    prefix = np.concatenate([[0.0], np.cumsum(ys)])
    total = sum(_entropy_sorted(ys, prefix, t) for t in full)
    return 2.0 / full.shape[0] * total


# ---------------------------------------------------------------------------
# Heap bank kernels. ``buf[m, :cnt[m]]`` is heap m, ``tot[m]`` its sum.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _bank_push(buf, cnt, tot, m, v):
    mmh_push(buf[m], cnt[m], v)
    cnt[m] += 1
    tot[m] += v


@njit(cache=True, nogil=True)
def _bank_pop_min(buf, cnt, tot, m):
    v = mmh_pop_min(buf[m], cnt[m])
    cnt[m] -= 1
    tot[m] -= v
    return v


@njit(cache=True, nogil=True)
def _bank_pop_max(buf, cnt, tot, m):
    v = mmh_pop_max(buf[m], cnt[m])
    cnt[m] -= 1
    tot[m] -= v
    return v


@njit(cache=True, nogil=True)
def _bank_insert(buf, cnt, tot, levels, s, v):
    """Push ``v`` as the ``s``-th value and restore the rank targets."""
    n_levels = levels.shape[0]
    dest = n_levels
    for m in range(n_levels):
        if cnt[m] > 0 and mmh_max(buf[m], cnt[m]) >= v:
            dest = m
            break
    _bank_push(buf, cnt, tot, dest, v)
    cum = 0
    for m in range(n_levels):
        cum += cnt[m]
        target = ceil_rank(levels[m], s)
        while cum < target:
            k = m + 1
            while cnt[k] == 0:
                k += 1
            _bank_push(buf, cnt, tot, m, _bank_pop_min(buf, cnt, tot, k))
            cum += 1
        while cum > target:
            _bank_push(buf, cnt, tot, m + 1, _bank_pop_max(buf, cnt, tot, m))
            cum -= 1


@njit(cache=True, nogil=True)
def _bank_entropy(buf, cnt, tot, levels, s, use_loo):
    """Summed (optionally leave-one-out) pinball entropy of the bank contents."""
    n_levels = levels.shape[0]
    total = 0.0
    for m in range(n_levels + 1):
        total += tot[m]
    out = 0.0
    cum_sum = 0.0
    cum = 0
    top = -1
    for m in range(n_levels):
        tau = levels[m]
        cum_sum += tot[m]
        cum += cnt[m]
        if cnt[m] > 0:
            top = m
        q = mmh_max(buf[top], cnt[top])
        h = _split_entropy(q, cum, s, cum_sum, total, tau)
        if use_loo:
            if s < 2:
                h = 0.0
            elif ceil_rank(tau, s - 1) == cum:
                k = m + 1
                while cnt[k] == 0:
                    k += 1
                nxt = mmh_min(buf[k], cnt[k])
                h += (1.0 - tau) * cum * (nxt - q) / s
            else:
                if cnt[top] >= 2:
                    prv = mmh_second_max(buf[top], cnt[top])
                else:
                    k = top - 1
                    while cnt[k] == 0:
                        k -= 1
                    prv = mmh_max(buf[k], cnt[k])
                h += tau * (s - cum + 1) * (q - prv) / s
        out += h
    return out


@njit(cache=True, nogil=True)
def _multiq_scan(y, levels, use_loo, out):
    n = y.shape[0]
    n_levels = levels.shape[0]
    buf = np.empty((n_levels + 1, max(n, 1)), dtype=np.float64)
    cnt = np.zeros(n_levels + 1, dtype=np.int64)
    tot = np.zeros(n_levels + 1, dtype=np.float64)
    out[0] = 0.0
    for s in range(1, n + 1):
        _bank_insert(buf, cnt, tot, levels, s, y[s - 1])
        out[s] = _bank_entropy(buf, cnt, tot, levels, s, use_loo)


def prefix_entropies_multiq(y, levels: Sequence[float], use_loo: bool = False) -> np.ndarray:
    """Summed pinball entropies of every prefix of ``y``.

    Parameters
    ----------
    y : array_like
        Targets in scan order (typically sorted by one feature).
    levels : sequence of float
        Strictly increasing quantile levels in (0, 1).
    use_loo : bool, default False
        Return leave-one-out entropies instead; singletons score 0.

    Returns
    -------
    ndarray of shape (n + 1,)
        Entry ``s`` is the entropy of ``y[:s]``; entry 0 is 0.
    """
    y = as_1d_float(y)
    lv = check_levels(levels)
    out = np.empty(y.shape[0] + 1, dtype=np.float64)
    _multiq_scan(y, lv, bool(use_loo), out)
    return out


class QuantileHeapBank:
    """Incremental multi-quantile state backed by ``M + 1`` min-max heaps.

    Useful on its own for streaming quantiles and to inspect the heap layout.

    >>> bank = QuantileHeapBank([0.3, 0.7])
    >>> for v in [0, 1, 2, 3, -1, -2]:
    ...     bank.insert(v)
    >>> bank.heap_contents()
    [[-2.0, -1.0], [0.0, 1.0, 2.0], [3.0]]
    """

    def __init__(self, levels: Sequence[float], capacity: int = 64):
        self.levels = check_levels(levels)
        self._buf = np.empty((self.levels.shape[0] + 1, max(int(capacity), 1)), dtype=np.float64)
        self._cnt = np.zeros(self.levels.shape[0] + 1, dtype=np.int64)
        self._tot = np.zeros(self.levels.shape[0] + 1, dtype=np.float64)
        self.count = 0

    def insert(self, v: float) -> None:
        if self.count == self._buf.shape[1]:
            grown = np.empty((self._buf.shape[0], 2 * self._buf.shape[1]), dtype=np.float64)
            grown[:, : self.count] = self._buf
            self._buf = grown
        self.count += 1
        _bank_insert(self._buf, self._cnt, self._tot, self.levels, self.count, float(v))

    def heap_contents(self) -> list[list[float]]:
        """Sorted contents of each heap, lowest heap first."""
        return [sorted(self._buf[m, : self._cnt[m]].tolist()) for m in range(self._cnt.shape[0])]

    def heap_sums(self) -> np.ndarray:
        return self._tot.copy()

    def quantiles(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no values inserted")
        out = np.empty(self.levels.shape[0])
        top = 0
        for m in range(self.levels.shape[0]):
            if self._cnt[m] > 0:
                top = m
            out[m] = mmh_max(self._buf[top], self._cnt[top])
        return out

    def entropy(self, use_loo: bool = False) -> float:
        if self.count == 0:
            return 0.0
        return float(_bank_entropy(self._buf, self._cnt, self._tot, self.levels, self.count, use_loo))

    def reset(self) -> None:
        self._cnt[:] = 0
        self._tot[:] = 0.0
        self.count = 0
