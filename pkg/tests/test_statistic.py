import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import random_complex

from msdspan.core import PortfolioSet, ReturnPanel, SpanningConfig, standard_simplex
from msdspan.statistic import (
    GridError,
    ZGrid,
    build_z_grid,
    hinge_kernel_K,
    kernel_q2,
    n1,
    n2,
    xi_T,
    xi_T_many,
)

ROWS = ReturnPanel.from_array([[1.0, 0.0], [0.0, 1.0]])
S2 = standard_simplex(2)
MID = PortfolioSet(np.array([[0.5, 0.5]]), ((0,),))
E1 = PortfolioSet(np.array([[1.0, 0.0]]), ((0,),))


def test_hinge_kernel():
    y = np.array([-2.0, 0.5])
    lam, kap = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert hinge_kernel_K(-1.0, lam, lam, y) == 0.0
    assert hinge_kernel_K(-1.0, lam, kap, y) == -1.0
    assert hinge_kernel_K(-5.0, lam, kap, y) == 0.0


def test_upper_kernel():
    lam, kap = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert kernel_q2(1.0, lam, lam, np.array([2.0, -1.0])) == 0.0
    assert kernel_q2(1.0, lam, kap, np.array([2.0, -1.0])) == 1.0
    assert kernel_q2(0.3, lam, kap, np.zeros(2)) == 0.0
    with pytest.raises(ValueError):
        kernel_q2(0.0, lam, kap, np.zeros(2))


def test_sample_value_grid():
    g = build_z_grid(ROWS, (S2, S2))
    np.testing.assert_array_equal(g.negatives, [0.0])
    np.testing.assert_array_equal(g.positives, [1.0])


def test_grid_errors():
    neg = ReturnPanel.from_array([[-1.0, -0.5], [-0.2, -0.3]])
    with pytest.raises(GridError, match="fixed-grid"):
        build_z_grid(neg, (S2, S2))
    g = build_z_grid(neg, (S2, S2), strict=False)
    assert g.positives.size == 0
    with pytest.raises(GridError):
        ZGrid([], [])
    with pytest.raises(GridError):
        ZGrid([0.5], [1.0])


def test_fixed_grid():
    g = build_z_grid(ROWS, (S2, S2), mode="fixed-grid", fixed_grid=((-1, 0, 0.5), (0.5, 1, 0.5)))
    np.testing.assert_array_equal(g.negatives, [-1.0, -0.5, 0.0])
    np.testing.assert_array_equal(g.positives, [0.5, 1.0])


def test_grid_cap(rng):
    Y = rng.normal(size=(200, 3))
    g = build_z_grid(Y, (standard_simplex(3), standard_simplex(3)), max_points=50)
    assert g.size <= 50
    assert g.negatives.size > 0 and g.positives.size > 0


def test_legs_on_small_examples():
    assert n1(ROWS, S2, S2, -0.3)[0] == 0.0
    assert n1(ROWS, S2, E1, 0.0)[0] == 0.0
    val, lam = n2(ROWS, S2, MID, 0.5)
    assert val == pytest.approx((1.5 - 1.0) / math.sqrt(2))
    with pytest.raises(ValueError):
        n1(ROWS, S2, S2, 0.1)
    with pytest.raises(ValueError):
        n2(ROWS, S2, S2, 0.0)


def test_xi_worked_example():
    grid = build_z_grid(ROWS, (S2, MID))
    res = xi_T(ROWS, S2, MID, grid)
    assert res.xi == pytest.approx(0.35355339059327373, abs=1e-12)
    assert (res.best_i, res.best_z) == (2, 0.5)
    # the per-z table holds every leg value and its maximum is the statistic
    assert res.per_z_values[:, 2].max() / math.sqrt(2) == res.xi


def test_dominated_extra_vertex_gives_zero():
    # L adds asset 1, whose returns (0.1, 0.2) are beaten by asset 2's (0.2, 0.3)
    Y = ReturnPanel.from_array([[0.1, 0.2], [0.2, 0.3]])
    L = PortfolioSet(np.eye(2), ((0,), (1,)))
    K = PortfolioSet(np.array([[0.0, 1.0]]), ((0,),))
    grid = build_z_grid(Y, (L, K), mode="fixed-grid", fixed_grid=((-0.5, 0.0, 0.05), (0.05, 0.5, 0.05)))
    assert xi_T(Y, L, K, grid).xi == 0.0


def test_ties_go_to_lower_leg_then_smaller_z():
    grid = ZGrid([-1.0, 0.0], [0.5, 1.0])
    res = xi_T(ROWS, S2, S2, grid)
    assert (res.best_i, res.best_z) == (1, -1.0)


def test_bnb_route_agrees_with_vertex_route(rng):
    Y = rng.normal(0, 0.05, size=(7, 3))
    L = random_complex(rng, 3)
    K = random_complex(rng, 3)
    grid = build_z_grid(Y, (L, K), strict=False)
    a = xi_T(Y, L, K, grid, mip_method="vertex")
    b = xi_T(Y, L, K, grid, mip_method="bnb")
    assert a.xi == pytest.approx(b.xi, abs=1e-10)


def test_pointwise_legs_match_table(rng):
    Y = rng.normal(0, 0.05, size=(12, 3))
    L, K = standard_simplex(3), PortfolioSet(np.eye(3)[:2], ((0, 1),))
    grid = build_z_grid(Y, (L, K))
    res = xi_T(Y, L, K, grid)
    for i, z, v in res.per_z_values[::5]:
        leg = n1(Y, L, K, z)[0] if i == 1 else n2(Y, L, K, z)[0]
        assert v / math.sqrt(12) == pytest.approx(leg, abs=1e-10)


@given(st.integers(0, 100_000))
def test_reflexive_and_nonnegative_for_subsets(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    Y = rng.standard_t(5, size=(int(rng.integers(3, 25)), n)) * 0.05
    L = random_complex(rng, n)
    grid = build_z_grid(Y, (L, L), strict=False)
    assert xi_T(Y, L, L, grid).xi == 0.0
    # dropping faces of L can only raise the statistic
    K = PortfolioSet(L.vertices, L.faces[:1])
    assert xi_T(Y, L, K, grid).xi >= 0.0


@given(st.integers(0, 100_000))
def test_adding_faces_to_k_never_increases(seed):
    rng = np.random.default_rng(seed)
    n = 3
    Y = rng.normal(0, 0.05, size=(15, n))
    L = random_complex(rng, n)
    K_small = random_complex(rng, n, max_faces=2)
    K_big = PortfolioSet.union(K_small, random_complex(rng, n, max_faces=1))
    grid = build_z_grid(Y, (L, K_big), mode="fixed-grid", fixed_grid=((-0.1, 0, 0.01), (0.01, 0.1, 0.01)))
    small, big = xi_T_many(Y, L, [K_small, K_big], grid)
    assert big.xi <= small.xi + 1e-12


def test_config_grid_through_sets():
    Y = ReturnPanel.from_array([[0.1, -0.1], [-0.2, 0.3], [0.05, 0.0]])
    cfg = SpanningConfig(z_grid_mode="fixed-grid", fixed_grid=((-0.2, 0.0, 0.1), (0.1, 0.3, 0.1)))
    from msdspan.statistic import grid_for

    g = grid_for(Y, S2, S2, cfg)
    np.testing.assert_allclose(g.negatives, [-0.2, -0.1, 0.0])
    np.testing.assert_allclose(g.positives, [0.1, 0.2, 0.3])
