"""Synthetic generators and CSV input/output."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .tree import Dataset

__all__ = [
    "DataError",
    "gen_gamma",
    "gen_hetero",
    "generate",
    "read_table",
    "load_csv",
    "load_features",
    "write_csv",
    "SYNTHETIC_KINDS",
]

SYNTHETIC_KINDS = ("gamma", "hetero")


class DataError(ValueError):
    """Malformed or unusable input data."""


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def gen_gamma(n: int, seed: int = 0) -> Dataset:
    """One feature ``X ~ U(0, 10)`` and ``Y | X ~ Gamma(sqrt(X), min(max(X, 1), 6))``.

    The Gamma law uses the shape/scale convention, so ``E[Y | X] = sqrt(X) * scale``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    x = rng.uniform(0.0, 10.0, size=n)
    # the open support excludes 0, where the shape would vanish
    while np.any(x == 0.0):
        zero = x == 0.0
        x[zero] = rng.uniform(0.0, 10.0, size=int(zero.sum()))
    y = rng.gamma(np.sqrt(x), np.clip(x, 1.0, 6.0))
    return Dataset(x.reshape(-1, 1), y, ["x"])


def gen_hetero(n: int, seed: int = 0) -> Dataset:
    """Two features on the unit square, ``y = s + eps * sqrt(1 + s^2)`` with ``s = x1 + x2``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    s = x.sum(axis=1)
    y = s + rng.standard_normal(n) * np.sqrt(1.0 + s**2)
    return Dataset(x, y, ["x1", "x2"])


def generate(kind: str, n: int, seed: int = 0) -> Dataset:
    if kind == "gamma":
        return gen_gamma(n, seed)
    if kind == "hetero":
        return gen_hetero(n, seed)
    raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Parse a numeric CSV with a header row into column names and a value matrix.

    Cells must parse as finite floats; the first offending cell is reported
    by line and column name.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8") from exc
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            text = cell.strip()
            if not text:
                raise DataError(f"{path}: line {line}, column {header[j]!r} is empty")
            try:
                v = float(text)
            except ValueError:
                raise DataError(f"{path}: line {line}, column {header[j]!r}: cannot parse {text!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line}, column {header[j]!r}: non-finite value {text!r}")
            values[i, j] = v
    return header, values


def load_csv(path: str | Path, target_column: str) -> Dataset:
    """Read a CSV file into a :class:`Dataset`; every other column is a feature."""
    header, values = read_table(path)
    if target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not found in header {header}")
    t = header.index(target_column)
    feats = [j for j in range(len(header)) if j != t]
    if not feats:
        raise DataError(f"{path}: no feature columns besides the target")
    return Dataset(values[:, feats], values[:, t], [header[j] for j in feats])


def load_features(path: str | Path, drop: str | None = None) -> tuple[np.ndarray, list[str]]:
    """Feature matrix of a CSV file, leaving out column ``drop`` when present."""
    header, values = read_table(path)
    keep = [j for j, h in enumerate(header) if h != drop]
    if not keep:
        raise DataError(f"{path}: no feature columns")
    return values[:, keep], [header[j] for j in keep]


def write_csv(path: str | Path, data: Dataset, target_column: str = "y") -> None:
    """Write ``data`` with full round-trip float precision."""
    names = data.column_names or [f"x{j + 1}" for j in range(data.n_features)]
    if target_column in names:
        raise ValueError(f"target column name {target_column!r} clashes with a feature name")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, target_column])
        for row, y in zip(data.features, data.targets):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])
