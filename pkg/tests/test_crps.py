from fractions import Fraction

import numpy as np
import pytest
from conftest import assert_close
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from distforest.crps import (
    EmpiricalCdf,
    crps_entropy_direct,
    crps_entropy_pairwise,
    crps_from_quantile_grid,
    crps_of_ecdf,
    crps_of_quantile_grids,
    crps_scan,
    loo_crps_entropy,
    prefix_entropies_crps,
)

SCAN_Y = [2, 1, 3, -1, -3, -2]


def test_ecdf_evaluation():
    F = EmpiricalCdf.from_sample([1, 1, 3])
    assert F(0.5) == 0.0 and F(1.0) == pytest.approx(2 / 3) and F(3.0) == 1.0
    assert F.left_limit(1.0) == 0.0 and F.left_limit(3.0) == pytest.approx(2 / 3)
    assert F.quantile(0.5) == 1.0 and F.quantile(2 / 3) == 1.0 and F.quantile(0.7) == 3.0
    assert F.quantile_upper(2 / 3) == 3.0 and F.quantile_upper(0.1) == 1.0


def test_ecdf_weighted():
    F = EmpiricalCdf.from_sample([0, 1, 2, 3], [0.25, 0.25, 0.25, 0.25])
    assert F.quantile(0.5) == 1.0
    assert F.cumulative[-1] == 1.0


def test_ecdf_rejects_empty():
    with pytest.raises(ValueError):
        EmpiricalCdf.from_sample([])


@pytest.mark.parametrize(
    "sample,y,expected",
    [([0, 1], 0.0, 0.25), ([5.0], 5.0, 0.0), ([1, 2], 0.0, 1.25), ([0, 1, 2], 1.0, 2 / 9)],
)
def test_crps_of_ecdf_examples(sample, y, expected):
    assert crps_of_ecdf(EmpiricalCdf.from_sample(sample), y) == pytest.approx(expected)


def test_crps_of_ecdf_against_exact_integral(rng):
    for _ in range(100):
        sample = rng.integers(-5, 5, int(rng.integers(1, 15))).astype(float)
        obs = float(rng.normal() * 4)
        exact = float(oracles.crps_integral(sample, obs))
        assert crps_of_ecdf(EmpiricalCdf.from_sample(sample), obs) == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_direct_entropy_examples():
    assert crps_entropy_direct([0, 1]) == 0.25
    assert crps_entropy_direct([0, 1, 2]) == pytest.approx(4 / 9, rel=1e-15)
    assert crps_entropy_direct([3.3] * 5) == 0.0


def test_direct_matches_pairwise(rng):
    for _ in range(100):
        y = rng.normal(size=int(rng.integers(1, 100)))
        assert_close(crps_entropy_direct(y), crps_entropy_pairwise(y), rtol=1e-12, scale=np.abs(y).max())


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40),
    st.floats(-50, 50),
    st.floats(0.1, 10),
)
def test_entropy_translation_and_scale(y, c, lam):
    y = np.asarray(y)
    h = crps_entropy_direct(y)
    scale = np.abs(y).max() + abs(c) + 1.0
    assert_close(crps_entropy_direct(y + c), h, rtol=1e-7, scale=1e4 * scale)
    assert_close(crps_entropy_direct(lam * y), lam * h, rtol=1e-7, scale=1e4 * lam * scale)


def test_loo_examples():
    assert loo_crps_entropy([0, 1, 2]) == pytest.approx(1.0)
    assert loo_crps_entropy([0, 1]) == pytest.approx(1.0)
    assert loo_crps_entropy([7.0, 7.0, 7.0]) == 0.0
    with pytest.raises(ValueError):
        loo_crps_entropy([1.0])


def test_loo_matches_explicit_removals(rng):
    for _ in range(50):
        y = rng.integers(-6, 6, int(rng.integers(2, 12))).astype(float)
        assert loo_crps_entropy(y) == pytest.approx(oracles.loo_crps_entropy(y), rel=1e-12, abs=1e-14)


def test_scan_trace_golden():
    scan = crps_scan(SCAN_Y)
    assert scan.ranks.tolist() == [1, 1, 3, 1, 1, 2]
    assert scan.sigma_inv.tolist() == [5, 4, 6, 3, 1, 2]
    assert scan.partial_sums.tolist() == [2, 1, 6, -1, -3, -5]
    assert scan.weighted_sums.tolist() == [2, 5, 14, 19, 21, 22]
    assert scan.h.tolist() == [0, 0, 2, 12, 52, 150, 264]
    exact = [oracles.crps_entropy_exact(SCAN_Y[:s]) for s in range(1, 7)]
    assert exact == [Fraction(h, s**3) for s, h in zip(range(1, 7), [0, 2, 12, 52, 150, 264])]


def test_prefix_small_example():
    assert prefix_entropies_crps([0, 1, 2]).tolist() == pytest.approx([0, 0, 0.25, 4 / 9])


def test_prefix_matches_direct_with_ties(rng):
    for _ in range(100):
        n = int(rng.integers(1, 120))
        y = rng.integers(-3, 3, n).astype(float) if rng.random() < 0.5 else rng.standard_cauchy(n)
        prof = prefix_entropies_crps(y)
        expected = [0.0] + [crps_entropy_direct(y[:s]) for s in range(1, n + 1)]
        assert_close(prof, expected, scale=np.abs(y).max())


def test_prefix_loo_rescaling(rng):
    y = rng.normal(size=50)
    plain, loo = prefix_entropies_crps(y), prefix_entropies_crps(y, use_loo=True)
    s = np.arange(2, 51)
    assert_close(loo[2:], plain[2:] * s**2 / (s - 1.0) ** 2, rtol=1e-12)
    assert loo[0] == loo[1] == 0.0


def test_mirror_consistency(rng):
    y = rng.normal(size=40)
    n = y.shape[0]
    fwd, bwd = prefix_entropies_crps(y), prefix_entropies_crps(y[::-1])
    score = [w * fwd[w] + (n - w) * bwd[n - w] for w in range(n + 1)]
    rfwd, rbwd = prefix_entropies_crps(y[::-1]), prefix_entropies_crps(y)
    mirrored = [(n - w) * rfwd[n - w] + w * rbwd[w] for w in range(n + 1)]
    assert_close(score, mirrored, rtol=1e-12)


def test_quantile_grid_examples():
    assert crps_from_quantile_grid([4.0, 4.0, 4.0], 4.0) == 0.0
    assert crps_from_quantile_grid([0, 1, 2], 1.0) == pytest.approx(2 / 9)


def test_quantile_grid_clamps_crossings():
    crps, crossings = crps_of_quantile_grids(np.array([[0.0, 2.0, 1.0, 3.0]]), np.array([1.5]))
    assert crossings.tolist() == [1]
    assert crps[0] == pytest.approx(crps_from_quantile_grid([0, 2, 2, 3], 1.5))


def test_quantile_grid_against_quadrature(rng):
    for _ in range(5):
        q = np.sort(rng.normal(size=20))
        obs = float(rng.normal())
        expected = oracles.crps_quadrature(q, obs)
        assert crps_from_quantile_grid(q, obs) == pytest.approx(expected, abs=1e-8)
