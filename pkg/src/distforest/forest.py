"""Bagged forests of distributional trees.

Each tree is grown on a without-replacement subsample drawn from its own
Philox substream of the forest seed, so the fitted forest depends only on the
seed and never on how many worker threads trained it. Predictions pool the
leaves reached in every tree into one mixture: each tree carries total weight
``1 / T`` spread evenly over its leaf's training targets.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numba import njit

from ._util import RANK_EPS
from .crps import EmpiricalCdf
from .tree import Criterion, Dataset, DistTree, TreeParams, fit_tree

logger = logging.getLogger(__name__)

__all__ = ["DistForest", "fit_forest", "default_threads", "FOREST_FORMAT_VERSION"]

FOREST_FORMAT_VERSION = 1
THREADS_ENV = "DISTFOREST_NUM_THREADS"


def default_threads() -> int:
    """Worker count from ``DISTFOREST_NUM_THREADS`` or the available CPUs."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    try:
        return max(len(os.sched_getaffinity(0)), 1)
    except AttributeError:
        return os.cpu_count() or 1


@njit(cache=True, nogil=True)
def _gather(leaf_row, offsets, data, vals, wts):
    n_trees = leaf_row.shape[0]
    k = 0
    for t in range(n_trees):
        a = offsets[leaf_row[t]]
        b = offsets[leaf_row[t] + 1]
        w = 1.0 / ((b - a) * n_trees)
        for i in range(a, b):
            vals[k] = data[i]
            wts[k] = w
            k += 1
    return k


@njit(cache=True, nogil=True)
def _pooled_quantiles(leaves, offsets, data, bufsize, levels, upper, out):
    vals = np.empty(bufsize)
    wts = np.empty(bufsize)
    for r in range(leaves.shape[0]):
        k = _gather(leaves[r], offsets, data, vals, wts)
        order = np.argsort(vals[:k], kind="mergesort")
        sv = vals[:k][order]
        cum = np.cumsum(wts[:k][order])
        for j in range(levels.shape[0]):
            if upper:
                idx = np.searchsorted(cum, levels[j] + RANK_EPS, side="right")
            else:
                idx = np.searchsorted(cum, levels[j] - RANK_EPS, side="left")
            if idx > k - 1:
                idx = k - 1
            out[r, j] = sv[idx]


@njit(cache=True, nogil=True)
def _pooled_cdf_at(leaves, offsets, data, bufsize, y, at, below):
    vals = np.empty(bufsize)
    wts = np.empty(bufsize)
    for r in range(leaves.shape[0]):
        k = _gather(leaves[r], offsets, data, vals, wts)
        le = 0.0
        lt = 0.0
        for i in range(k):
            if vals[i] <= y[r]:
                le += wts[i]
                if vals[i] < y[r]:
                    lt += wts[i]
        at[r] = min(le, 1.0)
        below[r] = min(lt, 1.0)


@dataclass
class DistForest:
    """Ensemble of :class:`DistTree` sharing a criterion and feature count."""

    trees: list[DistTree]
    criterion: Criterion
    params: TreeParams
    subsample_fraction: float = 1.0
    seed: int = 0
    sample_indices: list[np.ndarray] | None = None
    conformal: Any = None
    _flat: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        d = self.trees[0].n_features
        if any(t.n_features != d for t in self.trees):
            raise ValueError("all trees must share the feature count")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def _flatten(self):
        if self._flat is None:
            bases, offsets, chunks = [], [], []
            node_base, data_base = 0, 0
            for tree in self.trees:
                bases.append(node_base)
                offsets.append(tree.leaf_offsets[:-1] + data_base)
                chunks.append(tree.leaf_data)
                node_base += tree.n_nodes
                data_base += tree.leaf_data.shape[0]
            offsets.append(np.array([data_base], dtype=np.int64))
            max_leaf = max(int(np.diff(t.leaf_offsets).max()) for t in self.trees)
            self._flat = (
                np.asarray(bases, dtype=np.int64),
                np.concatenate(offsets).astype(np.int64),
                np.concatenate(chunks),
                max_leaf * self.n_trees,
            )
        return self._flat

    def _check_X(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        return X

    def apply(self, X) -> np.ndarray:
        """Global leaf ids of shape ``(n_rows, n_trees)``."""
        X = self._check_X(X)
        bases = self._flatten()[0]
        return np.stack([t.apply(X) + b for t, b in zip(self.trees, bases)], axis=1)

    def predict_quantiles(self, X, levels: Sequence[float], upper: bool = False) -> np.ndarray:
        """Quantiles of the pooled leaf mixture, shape ``(n_rows, n_levels)``.

        Level ``u`` maps to ``inf{v : F(v) >= u}``; with ``upper=True`` it maps
        to ``inf{v : F(v) > u}`` instead. Levels must lie in ``[0, 1]``.
        Outputs are non-decreasing in the level for every row.
        """
        lv = np.asarray(levels, dtype=np.float64).ravel()
        if lv.size == 0 or np.any(~np.isfinite(lv)) or np.any(lv < 0.0) or np.any(lv > 1.0):
            raise ValueError("quantile levels must lie in [0, 1]")
        leaves = self.apply(X)
        _, offsets, data, bufsize = self._flatten()
        out = np.empty((leaves.shape[0], lv.shape[0]))
        _pooled_quantiles(leaves, offsets, data, bufsize, lv, bool(upper), out)
        return out

    def cdf_at(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        """Pooled ``F(y)`` and ``F(y-)`` for each row and its paired target."""
        leaves = self.apply(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != leaves.shape[0]:
            raise ValueError("one target per row is required")
        _, offsets, data, bufsize = self._flatten()
        at = np.empty(y.shape[0])
        below = np.empty(y.shape[0])
        _pooled_cdf_at(leaves, offsets, data, bufsize, y, at, below)
        return at, below

    def predict_cdf(self, x) -> EmpiricalCdf:
        """Pooled predictive CDF of a single row as weighted breakpoints."""
        leaves = self.apply(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
        _, offsets, data, bufsize = self._flatten()
        vals = np.empty(bufsize)
        wts = np.empty(bufsize)
        k = _gather(leaves, offsets, data, vals, wts)
        return EmpiricalCdf.from_sample(vals[:k], wts[:k])

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FOREST_FORMAT_VERSION,
            "seed": self.seed,
            "subsample_fraction": self.subsample_fraction,
            "criterion": self.criterion.to_dict(),
            "params": self.params.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
            "conformal": self.conformal.to_dict() if self.conformal is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DistForest":
        from .conformal import ConformalCalibrator

        if d.get("format_version") != FOREST_FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {d.get('format_version')!r}")
        forest = cls(
            [DistTree.from_dict(t) for t in d["trees"]],
            Criterion.from_dict(d["criterion"]),
            TreeParams(**d["params"]),
            float(d["subsample_fraction"]),
            int(d["seed"]),
        )
        if d.get("conformal") is not None:
            forest.conformal = ConformalCalibrator.from_dict(d["conformal"])
        return forest


def fit_forest(
    data: Dataset,
    criterion: Criterion,
    params: TreeParams | None = None,
    n_trees: int = 50,
    subsample_fraction: float = 0.6,
    seed: int = 0,
    n_jobs: int | None = None,
) -> DistForest:
    """Fit ``n_trees`` trees on independent without-replacement subsamples.

    Parameters
    ----------
    data : Dataset
    criterion : Criterion
    params : TreeParams, optional
    n_trees : int, default 50
    subsample_fraction : float, default 0.6
        Each tree sees ``floor(subsample_fraction * n)`` distinct rows.
    seed : int, default 0
        Root of the per-tree Philox substreams.
    n_jobs : int, optional
        Worker threads; defaults to :func:`default_threads`. The result does
        not depend on it.
    """
    params = params or TreeParams()
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    if not 0.0 < subsample_fraction <= 1.0:
        raise ValueError("subsample_fraction must be in (0, 1]")
    n = len(data)
    m = int(np.floor(subsample_fraction * n))
    if m < 2:
        raise ValueError(f"subsample of {m} rows is too small; need at least 2")
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    indices = []
    for ss in streams:
        rng = np.random.Generator(np.random.Philox(ss))
        indices.append(np.sort(rng.choice(n, size=m, replace=False)))

    def grow(rows: np.ndarray) -> DistTree:
        return fit_tree(data.subset(rows), criterion, params)

    workers = n_jobs if n_jobs is not None else default_threads()
    if workers <= 1 or n_trees == 1:
        trees = [grow(rows) for rows in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, indices))
    logger.info("fitted %d trees on %d rows each", n_trees, m)
    return DistForest(trees, criterion, params, float(subsample_fraction), int(seed), indices)
