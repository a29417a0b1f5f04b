import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabcodes.mdc import (
    AssignmentError,
    LatticeParams,
    build_V,
    correlated_sumrate_lb,
    enumerate_tuples,
    md_decode,
    md_encode,
    sigma2_profile,
    solve_assignment,
    sumrate_approx,
)


@pytest.fixture(scope="module", params=[(3, 2), (3, 3), (5, 2), (7, 3)])
def assign(request):
    r, k = request.param
    return solve_assignment(LatticeParams(1.0, r, k))


def brute_force_cost(r, k):
    """Minimum cost over all assignments via explicit permutations (tiny cases only)."""
    V = build_V(r)
    a = solve_assignment(LatticeParams(1.0, r, k))
    side = V[V % r == 0]
    pool = [t for a1 in side for t in enumerate_tuples(int(a1), r, k, a.bound)]
    best = math.inf
    for perm in itertools.permutations(range(len(pool)), V.size):
        c = sum(abs(k * b - sum(pool[j])) for b, j in zip(V, perm))
        best = min(best, c)
    return best / k


def test_lattice_params_validation():
    with pytest.raises(ValueError, match="odd"):
        LatticeParams(1.0, 4, 2)
    with pytest.raises(ValueError):
        LatticeParams(0.0, 3, 2)
    assert LatticeParams(0.5, 7, 3).delta_s == 3.5


def test_build_V():
    np.testing.assert_array_equal(build_V(3), np.arange(-4, 5))
    assert build_V(7).size == 49


def test_enumerate_tuples():
    got = enumerate_tuples(0, 3, 2, 3.0)
    assert got == [(0, -3), (0, 0), (0, 3)]
    with pytest.raises(ValueError):
        enumerate_tuples(1, 3, 2, 3.0)


def test_small_cases_are_optimal():
    assert solve_assignment(LatticeParams(1.0, 3, 2)).cost == pytest.approx(brute_force_cost(3, 2))


def test_table_properties(assign):
    r, k = assign.r, assign.k
    assert assign.table.shape == (r * r, k)
    assert np.all(assign.table % r == 0)
    assert len({tuple(t) for t in assign.table.tolist()}) == r * r
    # every first component lies in V
    assert set(assign.table[:, 0].tolist()) <= set(assign.V.tolist())
    spread = assign.table.max(axis=1) - assign.table.min(axis=1)
    assert np.all(spread <= assign.bound)


def test_cost_matches_table(assign):
    c = np.abs(assign.k * assign.V - assign.table.sum(axis=1)).sum() / assign.k
    assert c == pytest.approx(assign.cost)


def test_deterministic():
    a = solve_assignment(LatticeParams(1.0, 7, 3))
    b = solve_assignment(LatticeParams(1.0, 7, 3))
    np.testing.assert_array_equal(a.table, b.table)


def test_round_trip_many_values(assign):
    rng = np.random.default_rng(3)
    delta = 0.37
    a = solve_assignment(LatticeParams(delta, assign.r, assign.k))
    v = rng.uniform(-1e3, 1e3, 100_000)
    b = np.sign(v / delta) * np.floor(np.abs(v / delta) + 0.5)
    np.testing.assert_array_equal(a.invert(md_encode(a, v)), b)


@settings(max_examples=60, deadline=None)
@given(st.integers(-10**6, 10**6), st.integers(-50, 50))
def test_shift_equivariance(b, m):
    a = solve_assignment(LatticeParams(1.0, 7, 3))
    per = a.params.period
    np.testing.assert_array_equal(a.lookup(b + m * per), a.lookup(b) + m * per)


def test_invert_unknown_tuple():
    a = solve_assignment(LatticeParams(1.0, 3, 2))
    with pytest.raises(AssignmentError, match="unassigned"):
        a.invert([0, 6])


def test_trivial_single_description():
    a = solve_assignment(LatticeParams(1.0, 3, 1))
    assert a.cost == 0
    np.testing.assert_array_equal(a.table[:, 0], a.V)


def test_decode_policies():
    a = solve_assignment(LatticeParams(2.0, 3, 2))
    tup = md_encode(a, 5.0)
    assert md_decode(a, {0: int(tup[0]), 1: int(tup[1])}) == pytest.approx(6.0)
    assert md_decode(a, {1: int(tup[1])}) == pytest.approx(2.0 * tup[1])
    assert md_decode(a, {}, empty_value=-1.5) == -1.5


def test_sigma2_profile_values():
    d = 2 * math.sqrt(12) / 5
    prof = sigma2_profile(LatticeParams(d, 7, 3), 133.0)
    c = d * d / 12
    assert prof.sigma2[0] == 133.0
    assert prof.sigma2[3] == pytest.approx(c)
    assert prof.sigma2[1] == pytest.approx(c * (1 + (1 / 3) * 7**3 * 1.1547**2))
    assert prof.sigma2[2] == pytest.approx(c * (1 + (1 / 12) * 7**3 * 1.1547**2))
    with pytest.raises(ValueError, match="psi"):
        sigma2_profile(LatticeParams(1.0, 3, 4), 1.0)


def test_sumrate_approx_warns_when_coarse():
    assert sumrate_approx(LatticeParams(1.0, 3, 2), 100.0) == pytest.approx(
        math.log2(2 * math.pi * math.e * 100) - 2 * math.log2(3))
    with pytest.warns(RuntimeWarning):
        sumrate_approx(LatticeParams(10.0, 3, 2), 1.0)


def test_correlated_lb_reduces_to_independent():
    # rho = 0, k' = k = 1: classical rate-distortion bound
    assert correlated_sumrate_lb(1, 1, 0.0, 0.25) == pytest.approx(0.5 * math.log2(1 + 4))
    with pytest.raises(ValueError):
        correlated_sumrate_lb(3, 2, -0.6, 1.0)
    assert correlated_sumrate_lb(2, 2, 0.0, 0.5) == pytest.approx(0.5 * math.log2(5.0))
