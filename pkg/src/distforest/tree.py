"""CART-style distributional regression trees.

Splits minimize ``w * H(left) + (n - w) * H(right)`` where ``H`` is one of
three empirical entropies: CRPS, summed multi-level pinball, or squared
error. For every feature the node's targets are sorted by that feature and
scanned forward and backward, giving all candidate children in one pass.
Leaves keep the sorted training targets that reach them.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from numba import njit

from ._util import as_1d_float
from .crps import crps_entropy_direct, crps_prefix_kernel, loo_crps_entropy, prefix_entropies_crps
from .pinball import (
    _multiq_scan,
    check_levels,
    loo_pinball_entropy,
    pinball_entropy,
    prefix_entropies_multiq,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Criterion",
    "Dataset",
    "TreeParams",
    "SplitDecision",
    "DistTree",
    "best_split",
    "fit_tree",
    "prefix_entropies_mse",
    "TREE_FORMAT_VERSION",
]

TREE_FORMAT_VERSION = 1

_KIND_CODES = {"crps": 0, "pinball": 1, "mse": 2}


@dataclass(frozen=True)
class Criterion:
    """Split criterion: ``"crps"``, ``"pinball"`` (needs ``levels``) or ``"mse"``."""

    name: str
    levels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.name not in _KIND_CODES:
            raise ValueError(f"unknown criterion {self.name!r}; expected one of {sorted(_KIND_CODES)}")
        if self.name == "pinball":
            if self.levels is None:
                raise ValueError("the pinball criterion requires quantile levels")
            object.__setattr__(self, "levels", tuple(float(t) for t in check_levels(self.levels)))
        elif self.levels is not None:
            raise ValueError(f"criterion {self.name!r} takes no levels")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.name]

    @property
    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels if self.levels is not None else (0.5,), dtype=np.float64)

    def prefix_entropies(self, y, use_loo: bool = False) -> np.ndarray:
        if self.name == "crps":
            return prefix_entropies_crps(y, use_loo)
        if self.name == "pinball":
            return prefix_entropies_multiq(y, self.levels, use_loo)
        return prefix_entropies_mse(y)

    def entropy(self, y, use_loo: bool = False) -> float:
        """Entropy of a whole sample evaluated without any scan."""
        y = as_1d_float(y)
        if y.shape[0] == 0:
            return 0.0
        if self.name == "mse":
            return float(np.mean((y - y.mean()) ** 2))
        if use_loo and y.shape[0] < 2:
            return 0.0
        if self.name == "crps":
            return loo_crps_entropy(y) if use_loo else crps_entropy_direct(y)
        fn = loo_pinball_entropy if use_loo else pinball_entropy
        return float(sum(fn(y, t) for t in self.levels))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "levels": list(self.levels) if self.levels is not None else None}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Criterion":
        return cls(d["name"], tuple(d["levels"]) if d.get("levels") is not None else None)


@dataclass
class Dataset:
    """Feature matrix and targets with optional column labels."""

    features: np.ndarray
    targets: np.ndarray
    column_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        self.targets = as_1d_float(self.targets, "targets")
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise ValueError("features must be a 2-D matrix with at least one column")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets"
            )
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("features and targets must be finite")
        if self.column_names is not None and len(self.column_names) != self.features.shape[1]:
            raise ValueError("column_names length does not match the feature count")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.targets[rows], self.column_names)


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 5
    min_samples_split: int = 10
    use_loo: bool = True

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    threshold: float
    left_count: int
    score: float
    gain: float


@njit(cache=True, nogil=True)
def _mse_scan(y, out):
    out[0] = 0.0
    mean = 0.0
    m2 = 0.0
    for s in range(1, y.shape[0] + 1):
        v = y[s - 1]
        delta = v - mean
        mean += delta / s
        m2 += delta * (v - mean)
        out[s] = m2 / s if m2 > 0.0 else 0.0


def prefix_entropies_mse(y) -> np.ndarray:
    """Population variance of every prefix via Welford's update."""
    y = as_1d_float(y)
    out = np.empty(y.shape[0] + 1)
    _mse_scan(y, out)
    return out


@njit(cache=True, nogil=True)
def _profile(ys, kind, levels, use_loo, out):
    if kind == 0:
        order = np.argsort(ys, kind="mergesort")
        inv = np.empty(ys.shape[0], dtype=np.int64)
        for i in range(order.shape[0]):
            inv[order[i]] = i + 1
        crps_prefix_kernel(ys, inv, use_loo, out)
    elif kind == 1:
        _multiq_scan(ys, levels, use_loo, out)
    else:
        _mse_scan(ys, out)


@njit(cache=True, nogil=True)
def _best_split_kernel(X, y, rows, kind, levels, use_loo, min_leaf):
    """Return (feature, left_count, score, threshold, parent_entropy).

    ``feature`` is -1 when no admissible split exists.
    """
    n = rows.shape[0]
    d = X.shape[1]
    fwd = np.empty(n + 1)
    bwd = np.empty(n + 1)
    xs = np.empty(n)
    ys = np.empty(n)
    yr = np.empty(n)
    best_f = -1
    best_w = -1
    best_score = np.inf
    best_thr = 0.0
    parent = 0.0
    lo = max(min_leaf, 1)
    hi = n - lo
    if lo > hi:
        return best_f, best_w, best_score, best_thr, parent
    for j in range(d):
        for i in range(n):
            xs[i] = X[rows[i], j]
        order = np.argsort(xs, kind="mergesort")
        xsort = xs[order]
        if xsort[0] == xsort[n - 1]:
            continue
        for i in range(n):
            ys[i] = y[rows[order[i]]]
        for i in range(n):
            yr[i] = ys[n - 1 - i]
        _profile(ys, kind, levels, use_loo, fwd)
        _profile(yr, kind, levels, use_loo, bwd)
        parent = fwd[n]
        for w in range(lo, hi + 1):
            if xsort[w - 1] == xsort[w]:
                continue
            sc = w * fwd[w] + (n - w) * bwd[n - w]
            if sc < best_score:
                best_score = sc
                best_f = j
                best_w = w
                a = xsort[w - 1]
                b = xsort[w]
                t = a + 0.5 * (b - a)
                if not (a <= t < b):
                    t = a
                best_thr = t
    return best_f, best_w, best_score, best_thr, parent


def _split_args(criterion: Criterion, use_loo: bool):
    return criterion.code, criterion.level_array, bool(use_loo) and criterion.name != "mse"


def best_split(
    X,
    y,
    criterion: Criterion,
    min_samples_leaf: int = 1,
    use_loo: bool = False,
) -> SplitDecision | None:
    """Find the entropy-minimizing axis-aligned split of one node.

    Parameters
    ----------
    X : array_like of shape (n, d)
    y : array_like of shape (n,)
    criterion : Criterion
    min_samples_leaf : int, default 1
        Both children must keep at least this many rows.
    use_loo : bool, default False
        Score children with leave-one-out entropies (ignored for ``"mse"``).

    Returns
    -------
    SplitDecision or None
        ``None`` when every feature is constant on the node or no position
        satisfies the leaf-size constraint. Among equal scores the smallest
        feature index, then the smallest left size, wins. Rows with feature
        value ``<= threshold`` go left.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = as_1d_float(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different row counts")
    if y.shape[0] < 2:
        return None
    rows = np.arange(y.shape[0], dtype=np.int64)
    return _best_split_rows(X, y, rows, criterion, min_samples_leaf, use_loo)


def _best_split_rows(X, y, rows, criterion, min_samples_leaf, use_loo) -> SplitDecision | None:
    kind, levels, loo = _split_args(criterion, use_loo)
    f, w, score, thr, parent = _best_split_kernel(X, y, rows, kind, levels, loo, int(min_samples_leaf))
    if f < 0:
        return None
    n = rows.shape[0]
    return SplitDecision(int(f), float(thr), int(w), float(score), float(n * parent - score))


@njit(cache=True, nogil=True)
def _apply_kernel(X, feature, threshold, left, right, out):
    for i in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node


@dataclass
class DistTree:
    """Fitted tree stored as flat node arrays.

    Node ``k`` is internal when ``left[k] >= 0``; its leaf targets are
    ``leaf_data[leaf_offsets[k]:leaf_offsets[k + 1]]`` (empty for internal
    nodes). Node 0 is the root.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    leaf_offsets: np.ndarray
    leaf_data: np.ndarray
    n_features: int
    criterion: Criterion
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def is_leaf(self, node: int) -> bool:
        return bool(self.left[node] < 0)

    def leaf_values(self, node: int) -> np.ndarray:
        return self.leaf_data[self.leaf_offsets[node] : self.leaf_offsets[node + 1]]

    def _check_X(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf node id reached by each row of ``X``."""
        X = self._check_X(X)
        out = np.empty(X.shape[0], dtype=np.int64)
        _apply_kernel(X, self.feature, self.threshold, self.left, self.right, out)
        return out

    def predict_leaf(self, x) -> np.ndarray:
        """Sorted training targets of the leaf reached by a single row ``x``."""
        x = np.asarray(x, dtype=np.float64).ravel()
        return self.leaf_values(int(self.apply(x.reshape(1, -1))[0]))

    def node_at_depth(self, X, depth: int) -> np.ndarray:
        """Deepest node reached by each row without going below ``depth``."""
        X = self._check_X(X)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            node = 0
            while self.left[node] >= 0 and self.depth[node] < depth:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = node
        return out

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for k in range(self.n_nodes):
            if self.left[k] >= 0:
                nodes.append(
                    {
                        "type": "internal",
                        "feature": int(self.feature[k]),
                        "threshold": float(self.threshold[k]),
                        "children": [int(self.left[k]), int(self.right[k])],
                    }
                )
            else:
                nodes.append({"type": "leaf", "leaf_targets": self.leaf_values(k).tolist()})
        return {
            "format_version": TREE_FORMAT_VERSION,
            "criterion": self.criterion.to_dict(),
            "params": self.params.to_dict(),
            "n_features": self.n_features,
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DistTree":
        if d.get("format_version") != TREE_FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {d.get('format_version')!r}")
        nodes = d["nodes"]
        if not nodes:
            raise ValueError("tree has no nodes")
        n = len(nodes)
        feature = np.zeros(n, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        chunks = []
        offsets = np.zeros(n + 1, dtype=np.int64)
        for k, node in enumerate(nodes):
            if node["type"] == "internal":
                feature[k] = node["feature"]
                threshold[k] = node["threshold"]
                left[k], right[k] = node["children"]
                vals = np.empty(0)
            elif node["type"] == "leaf":
                vals = np.sort(np.asarray(node["leaf_targets"], dtype=np.float64))
                if vals.size == 0:
                    raise ValueError(f"leaf {k} has no targets")
            else:
                raise ValueError(f"unknown node type {node['type']!r}")
            chunks.append(vals)
            offsets[k + 1] = offsets[k] + vals.size
        for k in range(n):
            if left[k] >= 0:
                if not (0 < left[k] < n and 0 < right[k] < n):
                    raise ValueError(f"node {k} has out-of-range children")
                depth[left[k]] = depth[right[k]] = depth[k] + 1
        return cls(
            feature,
            threshold,
            left,
            right,
            depth,
            offsets,
            np.concatenate(chunks),
            int(d["n_features"]),
            Criterion.from_dict(d["criterion"]),
            TreeParams(**d["params"]),
        )


def fit_tree(data: Dataset, criterion: Criterion, params: TreeParams | None = None) -> DistTree:
    """Grow a tree depth-first until a stopping rule fires.

    A node becomes a leaf when it reaches ``max_depth``, has fewer than
    ``min_samples_split`` rows (or too few to give both children
    ``min_samples_leaf``), has constant targets, or when the best split
    does not lower the node's total entropy.
    """
    params = params or TreeParams()
    n = len(data)
    if n == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    X, y = data.features, data.targets
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    depth: list[int] = []
    leaf_chunks: list[np.ndarray] = []

    def new_node(d: int) -> int:
        feature.append(0)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        depth.append(d)
        leaf_chunks.append(np.empty(0))
        return len(feature) - 1

    root = new_node(0)
    stack = [(root, np.arange(n, dtype=np.int64))]
    while stack:
        node, rows = stack.pop()
        d = depth[node]
        ys = y[rows]
        split = None
        can_split = (
            (params.max_depth is None or d < params.max_depth)
            and rows.shape[0] >= params.min_samples_split
            and rows.shape[0] >= 2 * params.min_samples_leaf
            and ys.min() < ys.max()
        )
        if can_split:
            split = _best_split_rows(X, y, rows, criterion, params.min_samples_leaf, params.use_loo)
            if split is not None:
                scale = max(abs(split.score + split.gain), np.finfo(float).tiny)
                if split.gain <= 1e-12 * scale:
                    split = None
        if split is None:
            leaf_chunks[node] = np.sort(ys)
            continue
        go_left = X[rows, split.feature_index] <= split.threshold
        lnode, rnode = new_node(d + 1), new_node(d + 1)
        feature[node], threshold[node] = split.feature_index, split.threshold
        left[node], right[node] = lnode, rnode
        stack.append((rnode, rows[~go_left]))
        stack.append((lnode, rows[go_left]))

    offsets = np.zeros(len(feature) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([c.size for c in leaf_chunks])
    tree = DistTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(depth, dtype=np.int64),
        offsets,
        np.concatenate(leaf_chunks),
        data.n_features,
        criterion,
        params,
    )
    logger.debug("fitted tree with %d nodes on %d rows", tree.n_nodes, n)
    return tree


def make_criterion(name: str, levels: Sequence[float] | None = None) -> Criterion:
    """Build a :class:`Criterion`, dropping ``levels`` for criteria that ignore them."""
    return Criterion(name, tuple(levels) if (name == "pinball" and levels is not None) else None)
