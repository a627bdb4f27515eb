"""Wall-clock scaling of the CRPS prefix scan against per-prefix recomputation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .crps import crps_entropy_pairwise, prefix_entropies_crps

logger = logging.getLogger(__name__)

__all__ = [
    "BenchRecord",
    "brute_prefix_entropies",
    "bench_prefix_entropies",
    "correctness_gate",
    "loglog_slope",
    "run_bench",
    "write_records",
    "DEFAULT_FAST_SIZES",
    "DEFAULT_BRUTE_SIZES",
]

DEFAULT_FAST_SIZES = tuple(2**k for k in range(10, 18))
DEFAULT_BRUTE_SIZES = tuple(2**k for k in range(7, 12))


@dataclass(frozen=True)
class BenchRecord:
    n: int
    method: str
    seconds: float
    repeats: int


def brute_prefix_entropies(y) -> np.ndarray:
    """Entropy of every prefix, each recomputed from scratch in O(s^2)."""
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(y.shape[0] + 1)
    for s in range(1, y.shape[0] + 1):
        out[s] = crps_entropy_pairwise(y[:s])
    return out


_METHODS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "fast": prefix_entropies_crps,
    "brute": brute_prefix_entropies,
}


def correctness_gate(n: int = 256, seed: int = 0, rtol: float = 1e-9) -> float:
    """Check both methods agree before any timing; returns the worst relative gap."""
    y = np.random.default_rng(seed).standard_normal(n)
    fast, brute = prefix_entropies_crps(y), brute_prefix_entropies(y)
    gap = np.abs(fast - brute) / np.maximum(np.abs(brute), 1e-300)
    worst = float(gap[2:].max()) if n >= 2 else 0.0
    if worst > rtol:
        raise RuntimeError(f"fast and brute prefix entropies disagree (relative gap {worst:.3g})")
    return worst


def bench_prefix_entropies(
    sizes: Sequence[int],
    repeats: int = 3,
    method: str = "fast",
    seed: int = 0,
) -> list[BenchRecord]:
    """Median wall time of one method on standard normal targets per size."""
    if repeats < 3:
        raise ValueError("at least three repeats are required")
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    fn = _METHODS[method]
    fn(np.zeros(4))  # warm up compiled kernels
    rng = np.random.default_rng(seed)
    records = []
    for n in sizes:
        y = rng.standard_normal(int(n))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(y)
            times.append(time.perf_counter() - t0)
        sec = max(float(np.median(times)), 1e-9)
        records.append(BenchRecord(int(n), method, sec, repeats))
        logger.info("%s n=%d: %.4g s", method, n, sec)
    return records


def loglog_slope(records: Sequence[BenchRecord]) -> float:
    n = np.array([r.n for r in records], dtype=np.float64)
    sec = np.array([r.seconds for r in records])
    return float(np.polyfit(np.log(n), np.log(sec), 1)[0])


def run_bench(
    fast_sizes: Sequence[int] = DEFAULT_FAST_SIZES,
    brute_sizes: Sequence[int] = DEFAULT_BRUTE_SIZES,
    repeats: int = 3,
    seed: int = 0,
) -> tuple[list[BenchRecord], dict]:
    """Gate, time both methods and fit log-log slopes."""
    gap = correctness_gate(seed=seed)
    fast = bench_prefix_entropies(fast_sizes, repeats, "fast", seed)
    brute = bench_prefix_entropies(brute_sizes, repeats, "brute", seed) if brute_sizes else []
    summary = {
        "correctness_gap": gap,
        "fast_slope": loglog_slope(fast) if len(fast) >= 2 else None,
        "brute_slope": loglog_slope(brute) if len(brute) >= 2 else None,
        "fast_sizes": list(map(int, fast_sizes)),
        "brute_sizes": list(map(int, brute_sizes)),
        "repeats": repeats,
    }
    return fast + brute, summary


def write_records(path: str | Path, records: Sequence[BenchRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "method", "seconds", "repeats"])
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2) + "\n")
