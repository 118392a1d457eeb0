import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msdspan.core import PortfolioSet, ReturnPanel, SpanningConfig, standard_simplex, sub_simplex
from msdspan.resampling import (
    ACCEPT,
    REJECT,
    bias_correct,
    decide,
    empirical_quantile,
    run_spanning_test,
    subsample_stats,
)
from msdspan.statistic import build_z_grid, xi_T

L3 = standard_simplex(3)
K3 = sub_simplex(3, [0, 1])


def test_window_count_and_full_window(rng):
    Y = rng.normal(0, 0.05, size=(5, 3))
    d = subsample_stats(Y, L3, K3, 3)
    assert d.stats.size == 3
    full = subsample_stats(Y, L3, K3, 5)
    assert full.stats.size == 1
    assert full.stats[0] == xi_T(Y, L3, K3, build_z_grid(Y, (L3, K3))).xi


def test_windows_are_contiguous(rng):
    Y = rng.normal(0, 0.05, size=(12, 3))
    d = subsample_stats(Y, L3, K3, 6)
    for t in (0, 3, 6):
        W = Y[t : t + 6]
        expected = xi_T(W, L3, K3, build_z_grid(W, (L3, K3), strict=False)).xi
        assert d.stats[t] == expected


@pytest.mark.parametrize("c", [0.02, -0.01, 0.0])
def test_constant_panel_gives_zero_stats(c):
    # every portfolio earns c in every period, so all portfolios coincide
    Y = np.full((10, 3), c)
    d = subsample_stats(Y, L3, K3, 4)
    np.testing.assert_array_equal(d.stats, np.zeros(7))


def test_constant_rows_with_distinct_assets_are_not_spanned():
    Y = np.tile([0.01, -0.02, 0.03], (10, 1))
    d = subsample_stats(Y, L3, K3, 4)
    # asset 3 beats every portfolio of K by 0.02 in each of the 4 periods
    np.testing.assert_allclose(d.stats, np.full(7, 0.02 * 4 / 2), atol=1e-15)


def test_invalid_window_size(rng):
    with pytest.raises(ValueError):
        subsample_stats(rng.normal(size=(5, 3)), L3, K3, 6)


def test_global_grid_policy(rng):
    Y = rng.normal(0, 0.05, size=(20, 3))
    cfg = SpanningConfig(grid_policy="global")
    d = subsample_stats(Y, L3, K3, 10, cfg)
    grid = build_z_grid(Y, (L3, K3))
    assert d.stats[4] == xi_T(Y[4:14], L3, K3, grid).xi


def test_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4, 5], 0.8) == 4
    assert empirical_quantile([1, 2], 0.5) == 1
    assert empirical_quantile([7.0] * 9, 0.33) == 7.0
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50),
    st.floats(0.01, 0.99),
    st.floats(0.01, 0.99),
    st.floats(-100, 100),
)
def test_quantile_monotone_and_equivariant(xs, p, q, c):
    lo, hi = sorted((p, q))
    assert empirical_quantile(xs, lo) <= empirical_quantile(xs, hi)
    shifted = [x + c for x in xs]
    assert empirical_quantile(shifted, p) == pytest.approx(empirical_quantile(xs, p) + c)


def test_quantile_is_left_continuous_inverse():
    xs = np.arange(1, 21, dtype=float)
    for p in (0.05, 0.5, 0.95):
        y = empirical_quantile(xs, p)
        assert np.mean(xs <= y) >= p
        smaller = xs[xs < y]
        assert smaller.size == 0 or np.mean(xs <= smaller.max()) < p


def test_bias_correction_examples():
    bc = bias_correct([(10, 2.0), (20, 1.5)], 100)
    assert bc.gamma0 == pytest.approx(1.0, abs=1e-12)
    assert bc.gamma1 == pytest.approx(10.0, abs=1e-12)
    assert bc.corrected_quantile == pytest.approx(1.1, abs=1e-12)
    flat = bias_correct([(10, 0.7), (20, 0.7), (40, 0.7)], 500)
    assert flat.gamma1 == pytest.approx(0.0, abs=1e-12)
    assert flat.corrected_quantile == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(ValueError, match="singular"):
        bias_correct([(10, 1.0), (10, 2.0)], 100)


@given(st.floats(-5, 5), st.floats(-50, 50), st.integers(100, 2000))
def test_bias_correction_recovers_lines(g0, g1, T):
    bs = [T // 8, T // 4, T // 2, (3 * T) // 4]
    bc = bias_correct([(b, g0 + g1 / b) for b in bs], T)
    assert abs(bc.gamma0 - g0) < 1e-12 * max(1, abs(g0), abs(g1))
    assert abs(bc.gamma1 - g1) < 1e-10 * max(1, abs(g1))
    assert bc.corrected_quantile == pytest.approx(bc.gamma0 + bc.gamma1 / T, abs=1e-12)


def test_decision_rule():
    assert decide(1.0, 1.0) == ACCEPT
    assert decide(26.78, 15.74) == REJECT
    assert decide(44.76, 31.48) == REJECT
    assert decide(0.0, float("inf")) == ACCEPT


def test_pipeline_reflexive(rng):
    panel = ReturnPanel.from_array(rng.normal(0, 0.05, size=(40, 3)))
    res = run_spanning_test(panel, L3, L3, SpanningConfig(subsample_sizes=(10, 20)))
    assert res.xi == 0.0
    assert res.decision == ACCEPT
    assert res.alpha_check == "violates-bound"  # ch = 1 when K = L = S


def test_pipeline_single_size_skips_correction(rng):
    panel = ReturnPanel.from_array(rng.normal(0, 0.05, size=(30, 3)))
    res = run_spanning_test(panel, L3, K3, SpanningConfig(subsample_sizes=(15,)))
    assert res.bias_correction is None
    assert res.critical_value == res.quantiles[0][1]
    assert any("bias correction skipped" in w for w in res.warnings)


def test_pipeline_threads_do_not_change_results(rng):
    panel = ReturnPanel.from_array(rng.normal(0, 0.05, size=(36, 3)))
    a = run_spanning_test(panel, L3, K3, SpanningConfig(subsample_sizes=(12, 24)))
    b = run_spanning_test(panel, L3, K3, SpanningConfig(subsample_sizes=(12, 24), threads=2))
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_pipeline_character_skipped_when_not_nested(rng):
    panel = ReturnPanel.from_array(rng.normal(0, 0.05, size=(30, 3)))
    L = sub_simplex(3, [0, 1])
    K = PortfolioSet(np.array([[0.0, 0.0, 1.0]]), ((0,),))
    res = run_spanning_test(panel, L, K, SpanningConfig(subsample_sizes=(10, 20)))
    assert res.character is None
    assert any("not contained" in w for w in res.warnings)
