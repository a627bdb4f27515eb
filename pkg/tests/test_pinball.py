import numpy as np
import pytest
from conftest import assert_close
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from distforest.crps import crps_entropy_direct
from distforest.pinball import (
    QuantileHeapBank,
    check_levels,
    empirical_quantile,
    loo_pinball_entropy,
    pinball_entropy,
    pinball_loss,
    prefix_entropies_multiq,
    symmetric_levels,
    wis_entropy,
    wis_loss,
)

WORKED_Y = [0, 1, 2, 3, -1, -2, -3]


@pytest.mark.parametrize("xi,tau,expected", [(2.0, 0.3, 0.6), (-1.0, 0.3, 0.7), (0.0, 0.8, 0.0)])
def test_pinball_loss_values(xi, tau, expected):
    assert pinball_loss(xi, tau) == pytest.approx(expected)


def test_pinball_loss_vectorized():
    out = pinball_loss(np.array([-1.0, 2.0]), 0.25)
    assert out.tolist() == [0.75, 0.5]


def test_empirical_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4], 0.5) == 2
    assert empirical_quantile(WORKED_Y[:6], 0.3) == -1


def test_empirical_quantile_rejects_empty():
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)


def test_empirical_quantile_against_sort(rng):
    for _ in range(200):
        y = rng.normal(size=int(rng.integers(1, 40)))
        for tau in np.arange(1, 100) / 100:
            assert empirical_quantile(y, tau) == oracles.quantile(y, tau)


def test_pinball_entropy_examples():
    assert pinball_entropy([0, 1, 2, 3], 0.5) == pytest.approx(0.5)
    assert pinball_entropy([4.0] * 7, 0.3) == 0.0
    assert pinball_entropy(WORKED_Y[:6], 0.3) == pytest.approx(0.6166666666666667)


def test_pinball_entropy_against_mean_loss(rng):
    for _ in range(300):
        n = int(rng.integers(1, 60))
        y = rng.integers(-5, 5, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        tau = float(rng.uniform(0.01, 0.99))
        assert_close(pinball_entropy(y, tau), oracles.pinball_entropy(y, tau), scale=np.abs(y).max())


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40),
    st.floats(0.01, 0.99),
    st.floats(-50, 50),
    st.floats(0.1, 10),
)
def test_pinball_entropy_translation_and_scale(y, tau, c, lam):
    y = np.asarray(y)
    h = pinball_entropy(y, tau)
    scale = np.abs(y).max() + abs(c) + 1.0
    assert h >= 0.0
    assert_close(pinball_entropy(y + c, tau), h, rtol=1e-7, scale=1e4 * scale)
    assert_close(pinball_entropy(lam * y, tau), lam * h, rtol=1e-7, scale=1e4 * scale * lam)


def test_loo_worked_example():
    assert pinball_entropy([1, 2, 3, 4, 5], 0.5) == pytest.approx(0.6)
    assert loo_pinball_entropy([1, 2, 3, 4, 5], 0.5) == pytest.approx(0.9)


def test_loo_constant_is_zero():
    assert loo_pinball_entropy([2.5] * 9, 0.3) == 0.0


def test_loo_rejects_singleton():
    with pytest.raises(ValueError):
        loo_pinball_entropy([1.0], 0.5)


def test_loo_boundary_heavy_inputs():
    # extreme levels put the quantile at the first or last order statistic
    for n in range(2, 30):
        y = np.arange(n, dtype=float) ** 1.5
        for tau in (0.001, 0.01, 0.5, 0.99, 0.999):
            assert_close(loo_pinball_entropy(y, tau), oracles.loo_pinball_entropy(y, tau), rtol=1e-12, scale=y.max())


def test_check_levels_validation():
    assert check_levels([0.1, 0.5]).tolist() == [0.1, 0.5]
    for bad in ([], [0.5, 0.5], [0.6, 0.4], [0.0, 0.5], [0.5, 1.0]):
        with pytest.raises(ValueError):
            check_levels(bad)


def test_symmetric_levels():
    assert symmetric_levels([0.1, 0.25]).tolist() == pytest.approx([0.1, 0.25, 0.5, 0.75, 0.9])
    with pytest.raises(ValueError):
        symmetric_levels([0.5])


def test_wis_loss_examples():
    assert wis_loss([3, 3, 3], 3.0, [0.25]) == 0.0
    assert wis_loss([0, 0, 0], 3.0, [0.25]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        wis_loss([0, 0], 3.0, [0.25])


def test_wis_entropy_is_scaled_sum():
    y = np.array([0.3, -1.2, 2.2, 0.7])
    full = symmetric_levels([0.2, 0.4])
    expected = 2.0 / 5 * sum(oracles.pinball_entropy(y, t) for t in full)
    assert wis_entropy(y, [0.2, 0.4]) == pytest.approx(expected)


def test_heap_bank_worked_state():
    bank = QuantileHeapBank([0.3, 0.7], capacity=2)
    for v in WORKED_Y[:5]:
        bank.insert(v)
    assert bank.heap_contents() == [[-1.0, 0.0], [1.0, 2.0], [3.0]]
    bank.insert(-2)
    assert bank.heap_contents() == [[-2.0, -1.0], [0.0, 1.0, 2.0], [3.0]]
    assert bank.heap_sums().tolist() == [-3.0, 3.0, 3.0]
    assert bank.quantiles().tolist() == [-1.0, 2.0]


def test_heap_bank_cardinalities_every_step(rng):
    levels = [0.05, 0.3, 0.31, 0.9]
    bank = QuantileHeapBank(levels)
    for s, v in enumerate(rng.integers(-3, 3, 300).astype(float), start=1):
        bank.insert(v)
        sizes = np.cumsum([len(h) for h in bank.heap_contents()])
        assert sizes.tolist() == [oracles.exact_rank(t, s) for t in levels] + [s]
        flat = [x for h in bank.heap_contents() for x in h]
        assert flat == sorted(flat)


def test_heap_bank_quantiles_match_sort(rng):
    levels = [0.1, 0.15, 0.5, 0.8]
    bank = QuantileHeapBank(levels)
    seen = []
    for v in rng.normal(size=200):
        bank.insert(v)
        seen.append(v)
        assert bank.quantiles().tolist() == [oracles.quantile(seen, t) for t in levels]


def test_heap_bank_reset():
    bank = QuantileHeapBank([0.5])
    bank.insert(1.0)
    bank.reset()
    assert bank.entropy() == 0.0 and bank.heap_contents() == [[], []]


def test_prefix_profile_worked_example():
    prof = prefix_entropies_multiq(WORKED_Y, [0.3, 0.7])
    assert prof[0] == 0.0 and prof[1] == 0.0
    assert prof[6] == pytest.approx(1.2333333333333334)


def test_prefix_profile_matches_oracle(rng):
    for _ in range(60):
        n = int(rng.integers(1, 80))
        m = int(rng.integers(1, 10))
        levels = np.sort(rng.choice(np.arange(1, 100), size=m, replace=False)) / 100
        y = rng.integers(-4, 4, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        prof = prefix_entropies_multiq(y, levels)
        loo = prefix_entropies_multiq(y, levels, use_loo=True)
        scale = np.abs(y).max()
        for s in range(1, n + 1):
            assert_close(prof[s], sum(oracles.pinball_entropy(y[:s], t) for t in levels), scale=scale)
            if s >= 2:
                expected = sum(oracles.loo_pinball_entropy(y[:s], t) for t in levels)
                assert_close(loo[s], expected, scale=scale)
        assert loo[1] == 0.0


def test_multi_entropy_is_sum_of_single_levels(rng):
    y = rng.normal(size=150)
    levels = [0.1, 0.4, 0.75]
    total = sum(prefix_entropies_multiq(y, [t]) for t in levels)
    assert_close(prefix_entropies_multiq(y, levels), total, scale=np.abs(y).max())


def test_wis_entropy_approaches_crps(rng):
    y = rng.normal(size=200)
    target = crps_entropy_direct(y)
    gaps = [abs(wis_entropy(y, np.arange(1, m + 1) / (2 * m + 2)) - target) for m in (4, 24, 99)]
    assert gaps[0] > gaps[1] > gaps[2]
