"""Evaluation of forest predictions on a test set."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .crps import crps_of_quantile_grids
from .pinball import symmetric_levels
from .tree import Dataset

__all__ = ["MetricReport", "quantile_grid", "crossing_percentage", "evaluate"]


def quantile_grid(step: float) -> np.ndarray:
    """Levels ``step * k`` for ``k = 1 .. round(1 / step)``; the last one is 1."""
    k = int(round(1.0 / step))
    if k < 2 or not np.isclose(k * step, 1.0):
        raise ValueError(f"grid step {step} must divide 1 into at least two parts")
    return np.arange(1, k + 1) / k


def crossing_percentage(quantiles: np.ndarray) -> float:
    """Share of adjacent level pairs where the higher level predicts lower, in percent."""
    q = np.atleast_2d(quantiles)
    if q.shape[1] < 2:
        return 0.0
    return float(100.0 * np.mean(q[:, :-1] > q[:, 1:]))


@dataclass
class MetricReport:
    mean_crps: float
    mean_wis: float
    crossing_pct: float
    n_test: int
    grid_step: float
    coverage: float | None = None
    mean_width: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items() if v is not None]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}" for k, v in rows)


def _wis_batch(q: np.ndarray, y: np.ndarray, full_levels: np.ndarray) -> np.ndarray:
    xi = y[:, None] - q
    loss = np.where(xi < 0, (full_levels - 1.0) * xi, full_levels * xi)
    return 2.0 / full_levels.shape[0] * loss.sum(axis=1)


def evaluate(forest, test: Dataset, grid_step: float = 0.02, calibrator=None) -> MetricReport:
    """Score a forest on ``test``.

    CRPS is computed for the step CDF with equal jumps at the predicted
    quantiles on :func:`quantile_grid`; WIS uses the grid levels below 1/2,
    their mirror images and the median. When a conformal calibrator is given
    (or attached to the forest) interval coverage and width are added.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    grid = quantile_grid(grid_step)
    X, y = test.features, test.targets
    q = forest.predict_quantiles(X, grid)
    crps, _ = crps_of_quantile_grids(q, y)
    base = grid[grid < 0.5 - 1e-12]
    full = symmetric_levels(base) if base.size else np.array([0.5])
    wis = _wis_batch(forest.predict_quantiles(X, full), y, full)
    report = MetricReport(
        mean_crps=float(np.mean(crps)),
        mean_wis=float(np.mean(wis)),
        crossing_pct=crossing_percentage(q),
        n_test=len(test),
        grid_step=float(grid_step),
    )
    cal = calibrator if calibrator is not None else getattr(forest, "conformal", None)
    if cal is not None:
        lo, hi = cal.predict_interval(forest, X)
        report.coverage = float(np.mean((y >= lo) & (y <= hi)))
        report.mean_width = float(np.mean(hi - lo))
    return report

