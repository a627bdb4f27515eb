"""CRPS scoring and the O(n log n) prefix scan of the empirical CRPS entropy.

For a sorted sample the mean CRPS of each point against the sample's own
empirical CDF is

    H = (1 / n^2) * sum_i (2 i - n - 1) * y_(i) = (2 W - (n + 1) S) / n^2,

with ``S`` the plain sum and ``W = sum_i i * y_(i)``. Scanning a sequence,
the unnormalized accumulator ``h = s^3 H`` is updated per insertion using the
insertion rank (from a :class:`~distforest.ordered.RankTree` kernel) and the
sum of already seen values that sort below the new one (from a Fenwick tree
laid out over the globally sorted order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._util import RANK_EPS, as_1d_float, check_nonempty
from .ordered import _PATH_CAPACITY, fenwick_add, fenwick_prefix, rank_tree_insert

__all__ = [
    "EmpiricalCdf",
    "crps_of_ecdf",
    "crps_entropy_direct",
    "crps_entropy_pairwise",
    "loo_crps_entropy",
    "CrpsScan",
    "crps_scan",
    "prefix_entropies_crps",
    "crps_from_quantile_grid",
    "crps_of_quantile_grids",
    "crps_of_samples",
]


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step CDF given by breakpoints and cumulative weights.

    ``values`` is strictly increasing and ``cumulative[j]`` is the CDF value on
    ``[values[j], values[j + 1])``. The last cumulative weight is 1.
    """

    values: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] == 0:
            raise ValueError("empirical CDF needs at least one breakpoint")
        if self.values.shape != self.cumulative.shape:
            raise ValueError("values and cumulative weights differ in length")

    @classmethod
    def from_sample(cls, sample, weights=None) -> "EmpiricalCdf":
        """Build the (optionally weighted) empirical CDF of ``sample``."""
        x = as_1d_float(sample, "sample")
        check_nonempty(x, "sample")
        w = np.full(x.shape[0], 1.0 / x.shape[0]) if weights is None else as_1d_float(weights, "weights")
        if w.shape != x.shape:
            raise ValueError("weights must match the sample length")
        order = np.argsort(x, kind="stable")
        xs, ws = x[order], w[order]
        values, start = np.unique(xs, return_index=True)
        mass = np.add.reduceat(ws, start)
        cum = np.cumsum(mass)
        cum /= cum[-1]
        return cls(values, cum)

    @property
    def sorted_values(self) -> np.ndarray:
        return self.values

    def __call__(self, t):
        idx = np.searchsorted(self.values, t, side="right") - 1
        out = np.where(idx >= 0, self.cumulative[np.maximum(idx, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """``F(t-)``, the mass strictly below ``t``."""
        idx = np.searchsorted(self.values, t, side="left") - 1
        out = np.where(idx >= 0, self.cumulative[np.maximum(idx, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, u):
        """Generalized inverse ``inf{v : F(v) >= u}``."""
        idx = np.searchsorted(self.cumulative, np.asarray(u) - RANK_EPS, side="left")
        out = self.values[np.minimum(idx, self.values.shape[0] - 1)]
        return float(out) if out.ndim == 0 else out

    def quantile_upper(self, u):
        """Upper inverse ``inf{v : F(v) > u}``."""
        idx = np.searchsorted(self.cumulative, np.asarray(u) + RANK_EPS, side="right")
        out = self.values[np.minimum(idx, self.values.shape[0] - 1)]
        return float(out) if out.ndim == 0 else out


def crps_of_ecdf(cdf: EmpiricalCdf, y: float) -> float:
    """CRPS of a step CDF at observation ``y`` by exact piecewise integration.

    Integrates ``F(s)^2`` below ``y`` and ``(1 - F(s))^2`` above it over the
    breakpoint segments.
    """
    v, c = cdf.values, cdf.cumulative
    y = float(y)
    total = 0.0
    if y < v[0]:
        total += v[0] - y
    if y > v[-1]:
        total += y - v[-1]
    # finite segments [v_j, v_{j+1}) carrying CDF value c_j
    lo, hi, cj = v[:-1], v[1:], c[:-1]
    below = np.clip(np.minimum(hi, y) - lo, 0.0, None)
    above = np.clip(hi - np.maximum(lo, y), 0.0, None)
    total += float(np.sum(cj**2 * below) + np.sum((1.0 - cj) ** 2 * above))
    return total


def crps_entropy_direct(y) -> float:
    """Closed-form mean CRPS of a sample against its own empirical CDF."""
    y = as_1d_float(y)
    check_nonempty(y)
    n = y.shape[0]
    ys = np.sort(y)
    i = np.arange(1, n + 1, dtype=np.float64)
    return max(float(np.sum((i - 1.0) * i * (ys - ys[::-1])) / n**3), 0.0)


def crps_entropy_pairwise(y) -> float:
    """Mean CRPS via half the mean absolute pairwise difference; O(n^2)."""
    y = as_1d_float(y)
    check_nonempty(y)
    return float(np.abs(y[:, None] - y[None, :]).sum() / (2.0 * y.shape[0] ** 2))


def loo_crps_entropy(y) -> float:
    """Leave-one-out CRPS entropy, ``n^2 / (n - 1)^2`` times the plain one."""
    y = as_1d_float(y)
    if y.shape[0] < 2:
        raise ValueError("leave-one-out entropy needs at least two points")
    n = y.shape[0]
    return crps_entropy_direct(y) * (n / (n - 1.0)) ** 2


@njit(cache=True, nogil=True)
def _crps_scan_kernel(y, sigma_inv, h_out, ranks, below_out, w_out):
    n = y.shape[0]
    cap = max(n, 1)
    val = np.empty(cap, dtype=np.float64)
    nodes = np.empty((cap, 3), dtype=np.int32)
    meta = np.array([-1, 0], dtype=np.int64)
    path = np.empty(_PATH_CAPACITY, dtype=np.int64)
    tree = np.zeros(n + 1, dtype=np.float64)
    S = 0.0
    W = 0.0
    h = 0.0
    h_out[0] = 0.0
    for s in range(1, n + 1):
        v = y[s - 1]
        r = rank_tree_insert(val, nodes, meta, path, v)
        pos = sigma_inv[s - 1]
        below = fenwick_prefix(tree, pos)
        W += r * v + S - below
        S += v
        t = s - 1
        h += t * (2 * r - 3 - t) * v + 2.0 * W - 2.0 * S - 2.0 * t * below
        fenwick_add(tree, pos, v)
        h_out[s] = h
        ranks[s - 1] = r
        below_out[s - 1] = below
        w_out[s - 1] = W


@dataclass(frozen=True)
class CrpsScan:
    """Full trace of the CRPS prefix scan.

    Attributes
    ----------
    h : ndarray (n + 1,)
        Unnormalized accumulators; ``h[s] / s**3`` is the entropy of ``y[:s]``.
    ranks : ndarray (n,)
        Insertion rank of ``y[s-1]`` among the first ``s`` values.
    partial_sums : ndarray (n,)
        Sum of the ``ranks[s-1]`` smallest of the first ``s`` values.
    weighted_sums : ndarray (n,)
        ``sum_i i * y_(i)`` over the first ``s`` values.
    sigma_inv : ndarray (n,)
        1-based position of each value in the stable sort of ``y``.
    """

    h: np.ndarray
    ranks: np.ndarray
    partial_sums: np.ndarray
    weighted_sums: np.ndarray
    sigma_inv: np.ndarray

    def entropies(self, use_loo: bool = False) -> np.ndarray:
        s = np.arange(self.h.shape[0], dtype=np.float64)
        out = np.zeros_like(self.h)
        if use_loo:
            out[2:] = self.h[2:] / (s[2:] * (s[2:] - 1.0) ** 2)
        else:
            out[1:] = self.h[1:] / s[1:] ** 3
        return np.maximum(out, 0.0)


def _sigma_inv(y: np.ndarray) -> np.ndarray:
    order = np.argsort(y, kind="stable")
    inv = np.empty(y.shape[0], dtype=np.int64)
    inv[order] = np.arange(1, y.shape[0] + 1)
    return inv


def crps_scan(y) -> CrpsScan:
    """Run the prefix scan and keep its intermediate state."""
    y = as_1d_float(y)
    n = y.shape[0]
    sigma_inv = _sigma_inv(y)
    h = np.empty(n + 1)
    ranks = np.empty(n, dtype=np.int64)
    below = np.empty(n)
    w = np.empty(n)
    _crps_scan_kernel(y, sigma_inv, h, ranks, below, w)
    return CrpsScan(h, ranks, below + y, w, sigma_inv)


@njit(cache=True, nogil=True)
def _normalize(h, use_loo, out):
    out[0] = 0.0
    for s in range(1, h.shape[0]):
        if use_loo:
            val = h[s] / (s * (s - 1.0) ** 2) if s >= 2 else 0.0
        else:
            val = h[s] / (float(s) ** 3)
        out[s] = val if val > 0.0 else 0.0


@njit(cache=True, nogil=True)
def crps_prefix_kernel(y, sigma_inv, use_loo, out):
    """Entropy profile of ``y`` into ``out``; for callers holding raw buffers."""
    n = y.shape[0]
    h = np.empty(n + 1)
    ranks = np.empty(n, dtype=np.int64)
    below = np.empty(n)
    w = np.empty(n)
    _crps_scan_kernel(y, sigma_inv, h, ranks, below, w)
    _normalize(h, use_loo, out)


def prefix_entropies_crps(y, use_loo: bool = False) -> np.ndarray:
    """CRPS entropies of every prefix of ``y`` in O(n log n).

    Parameters
    ----------
    y : array_like
        Targets in scan order.
    use_loo : bool, default False
        Return leave-one-out entropies; a singleton prefix scores 0.

    Returns
    -------
    ndarray of shape (n + 1,)
    """
    y = as_1d_float(y)
    out = np.empty(y.shape[0] + 1)
    crps_prefix_kernel(y, _sigma_inv(y), bool(use_loo), out)
    return out


def crps_of_samples(samples: np.ndarray, y: np.ndarray) -> np.ndarray:
    """CRPS of equal-weight atom forecasts, one row of atoms per observation.

    Uses ``E|X - y| - E|X - X'| / 2`` evaluated exactly on sorted atoms.
    """
    q = np.sort(np.atleast_2d(np.asarray(samples, dtype=np.float64)), axis=1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    k = q.shape[1]
    first = np.abs(q - y[:, None]).mean(axis=1)
    coef = (2.0 * np.arange(1, k + 1) - k - 1.0) / k**2
    spread = q @ coef
    return np.maximum(first - spread, 0.0)


def crps_of_quantile_grids(quantiles: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`crps_from_quantile_grid`.

    Returns the CRPS per row and the number of adjacent pairs per row that had
    to be clamped because a higher level predicted a lower value.
    """
    q = np.atleast_2d(np.asarray(quantiles, dtype=np.float64))
    crossings = np.sum(np.diff(q, axis=1) < 0, axis=1)
    clamped = np.maximum.accumulate(q, axis=1)
    return crps_of_samples(clamped, y), crossings


def crps_from_quantile_grid(quantiles, y: float) -> float:
    """CRPS of the step CDF jumping by ``1/K`` at each of ``K`` quantile values.

    Crossing inputs are clamped to their running maximum before scoring.
    """
    q = as_1d_float(quantiles, "quantiles")
    check_nonempty(q, "quantiles")
    crps, _ = crps_of_quantile_grids(q[None, :], np.array([float(y)]))
    return float(crps[0])
