"""Split-conformal intervals on top of a fitted forest.

Two score families are supported.

``"distributional"``
    Uses the nested family ``[Q(t), Q+(1 - t)]`` of the pooled predictive CDF,
    where ``Q`` is the lower and ``Q+`` the upper generalized inverse. A
    target ``y`` lies in the set for level ``t`` exactly when
    ``t <= min(F(y), 1 - F(y-))``, which is taken as its conformity score.
    The calibrated level is the ``floor(alpha (m + 1))``-th smallest score.

``"cqr"``
    Conformalized quantile regression around the pooled ``alpha/2`` and
    ``1 - alpha/2`` quantiles with margin equal to the
    ``ceil((1 - alpha)(m + 1))``-th smallest score.

Either method can be run per cell of a shallow tree partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .tree import Dataset, DistTree

__all__ = ["GroupPartition", "ConformalCalibrator", "calibrate", "METHODS"]

METHODS = ("distributional", "cqr")
MARGINAL = -1


@dataclass
class GroupPartition:
    """Cells of a tree truncated at ``depth``; group ids are node ids."""

    tree: DistTree
    depth: int

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("partition depth must be non-negative")

    @property
    def groups(self) -> list[int]:
        t = self.tree
        return [
            k
            for k in range(t.n_nodes)
            if t.depth[k] == self.depth or (t.depth[k] < self.depth and t.left[k] < 0)
        ]

    def group_of(self, X) -> np.ndarray:
        return self.tree.node_at_depth(X, self.depth)

    def to_dict(self) -> dict[str, Any]:
        return {"depth": self.depth, "tree": self.tree.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroupPartition":
        return cls(DistTree.from_dict(d["tree"]), int(d["depth"]))


def _distributional_scores(forest, X, y) -> np.ndarray:
    at, below = forest.cdf_at(X, y)
    return np.minimum(at, 1.0 - below)


def _cqr_bands(forest, X, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    q = forest.predict_quantiles(X, [alpha / 2.0, 1.0 - alpha / 2.0])
    return q[:, 0], q[:, 1]


def min_calibration_size(alpha: float) -> int:
    return math.ceil(1.0 / alpha - 1e-12)


@dataclass
class ConformalCalibrator:
    """Calibrated conformal parameters, one per group.

    ``values`` maps a group id to ``t*`` (distributional) or the margin
    (cqr). Without a partition the only key is ``-1``.
    """

    method: str
    alpha: float
    values: dict[int, float]
    partition: GroupPartition | None = None
    counts: dict[int, int] = field(default_factory=dict)

    def _groups(self, X) -> np.ndarray:
        if self.partition is None:
            return np.full(np.atleast_2d(X).shape[0], MARGINAL, dtype=np.int64)
        return self.partition.group_of(X)

    def parameter_for(self, X) -> np.ndarray:
        groups = self._groups(X)
        out = np.empty(groups.shape[0])
        for g in np.unique(groups):
            if int(g) not in self.values:
                raise ValueError(f"group {int(g)} was not calibrated")
            out[groups == g] = self.values[int(g)]
        return out

    def predict_interval(self, forest, X) -> tuple[np.ndarray, np.ndarray]:
        """Calibrated interval bounds ``(lo, hi)`` for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        par = self.parameter_for(X)
        if self.method == "distributional":
            lo = np.empty(X.shape[0])
            hi = np.empty(X.shape[0])
            for t in np.unique(par):
                rows = par == t
                lo[rows] = forest.predict_quantiles(X[rows], [t])[:, 0]
                hi[rows] = forest.predict_quantiles(X[rows], [1.0 - t], upper=True)[:, 0]
            return lo, hi
        qlo, qhi = _cqr_bands(forest, X, self.alpha)
        lo, hi = qlo - par, qhi + par
        crossed = lo > hi
        mid = 0.5 * (lo + hi)
        return np.where(crossed, mid, lo), np.where(crossed, mid, hi)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "values": {str(k): v for k, v in self.values.items()},
            "counts": {str(k): v for k, v in self.counts.items()},
            "partition": self.partition.to_dict() if self.partition is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConformalCalibrator":
        part = d.get("partition")
        return cls(
            d["method"],
            float(d["alpha"]),
            {int(k): float(v) for k, v in d["values"].items()},
            GroupPartition.from_dict(part) if part is not None else None,
            {int(k): int(v) for k, v in d.get("counts", {}).items()},
        )


def calibrate(
    forest,
    calib: Dataset,
    alpha: float = 0.1,
    method: str = "distributional",
    partition: GroupPartition | None = None,
) -> ConformalCalibrator:
    """Split-conformal calibration on held-out data.

    Parameters
    ----------
    forest : DistForest
        Fitted on data disjoint from ``calib``.
    calib : Dataset
    alpha : float, default 0.1
        Target miscoverage.
    method : {"distributional", "cqr"}
    partition : GroupPartition, optional
        Calibrate each cell separately.

    Raises
    ------
    ValueError
        If any group holds fewer than ``ceil(1 / alpha)`` calibration points.
    """
    if method not in METHODS:
        raise ValueError(f"unknown conformal method {method!r}; expected one of {METHODS}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    X, y = calib.features, calib.targets
    if method == "distributional":
        scores = _distributional_scores(forest, X, y)
    else:
        lo, hi = _cqr_bands(forest, X, alpha)
        scores = np.maximum(lo - y, y - hi)
    if partition is None:
        groups = np.full(len(calib), MARGINAL, dtype=np.int64)
        names = [MARGINAL]
    else:
        groups = partition.group_of(X)
        names = partition.groups
    need = min_calibration_size(alpha)
    values: dict[int, float] = {}
    counts: dict[int, int] = {}
    for g in names:
        s = np.sort(scores[groups == g])
        m = s.shape[0]
        if m < need:
            label = "marginal calibration" if g == MARGINAL else f"group {g}"
            raise ValueError(f"{label} has {m} calibration points; at least {need} are required")
        if method == "distributional":
            k = math.floor(alpha * (m + 1) + 1e-12)
            t = s[k - 1] if k >= 1 else 0.0
            values[g] = float(min(t, 0.5))
        else:
            k = math.ceil((1.0 - alpha) * (m + 1) - 1e-12)
            values[g] = float(s[min(k, m) - 1])
        counts[g] = m
    return ConformalCalibrator(method, float(alpha), values, partition, counts)
