import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spalf.errors import ArgumentError, ResourceError
from spalf.montecarlo import (MCEstimate, agrees, replicate_paths, sample_hitting, simulate_hitting,
                              verify_bivariate_laplace, verify_finiteness, verify_increments, verify_laplace_T)
from spalf.paths import smallest_solution

from helpers import walk_model


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.integers(1, 39))
def test_estimate_monoid(values, cut):
    cut = min(cut, len(values) - 1)
    whole = MCEstimate.from_values(values)
    parts = MCEstimate.from_values(values[:cut]) + MCEstimate.from_values(values[cut:])
    assert parts.n == whole.n
    assert parts.mean == pytest.approx(whole.mean, abs=1e-9)
    assert parts.stderr == pytest.approx(whole.stderr, abs=1e-9)
    assert (MCEstimate() + whole).mean == whole.mean


def test_estimate_statistics():
    e = MCEstimate.from_values([1.0, 2.0, 3.0, 4.0], censored=[True, False, False, False])
    assert e.mean == 2.5 and e.censored_fraction == 0.25
    assert e.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert agrees(e, 2.5 + 4 * e.stderr) and not agrees(e, 2.6 + 4 * e.stderr)


def test_death_process_gamma_law(death):
    # T_2 of a unit-rate death process is Gamma(2, 1): E exp(-lam T) = (1 + lam)^-2
    rec = verify_laplace_T(death, [2], [1.0], horizon=40, n=40_000, seed=1)
    assert rec.predicted == pytest.approx(0.25, abs=1e-10)
    assert rec.passed
    mc, pred = rec
    assert abs(mc.mean - 0.25) <= 4 * mc.stderr


def test_hitting_times_follow_the_paths(coupled):
    H = 60.0
    smp = simulate_hitting(coupled, [2, 1], H, 50, seed=4)
    for a in range(50):
        res = smallest_solution(replicate_paths(coupled, H, 4, a), [2, 1])
        got = tuple(float(t) if h else math.inf for t, h in zip(smp.times[a], smp.hit[a]))
        assert got == pytest.approx(res.s, rel=1e-12)
        if res.all_hit:
            np.testing.assert_array_equal(smp.X[a], np.array(res.matrix_at, dtype=float))


def test_sample_hitting_matches_batch(coupled):
    smp = simulate_hitting(coupled, [1, 1], 30.0, 20, seed=8)
    for a, res in enumerate(sample_hitting(coupled, [1, 1], 30.0, 20, seed=8)):
        assert res.all_hit == bool(smp.all_hit[a])
        if res.all_hit:
            assert res.s == pytest.approx(tuple(smp.times[a]), rel=1e-12)


def test_workers_do_not_change_results(coupled):
    a = simulate_hitting(coupled, [1, 2], 40.0, 20_000, seed=3, workers=1)
    b = simulate_hitting(coupled, [1, 2], 40.0, 20_000, seed=3, workers=4)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.hit, b.hit)


def test_finiteness_supercritical_walk():
    rec = verify_finiteness(walk_model(2 / 3, 1 / 3), [1], horizon=200, n=20_000, seed=2)
    assert rec.predicted == pytest.approx(0.5, abs=1e-9)
    assert rec.passed
    assert [row["horizon"] for row in rec.extra["ladder"]] == [50.0, 100.0, 200.0]


def test_bivariate_death_process(death):
    # Phi = ln(1 + lam) - mu for the death process; mu enters through X = -r
    rec = verify_bivariate_laplace(death, [2], [1.0], 0.2, horizon=30, n=40_000, seed=5)
    assert rec.extra["Phi"][0] == pytest.approx(math.log(2) - 0.2, abs=1e-9)
    assert rec.passed


def test_bivariate_coupled(coupled):
    rec = verify_bivariate_laplace(coupled, [1, 1], [1.0, 0.5], [[0.1, 0.1], [0.05, 0.0]],
                                   horizon=40, n=40_000, seed=6)
    assert rec.passed, rec.to_dict()


def test_increments(coupled):
    rec = verify_increments(coupled, [1, 1], [1, 0], horizon=60, n=20_000, seed=7)
    assert rec.passed, rec.extra["p_values"]
    corr = rec.extra["axis_correlation"]
    assert corr[0][0] == pytest.approx(1.0)


def test_argument_checks(coupled, bm2):
    with pytest.raises(ArgumentError):
        simulate_hitting(bm2, [1, 1], 10.0, 10, seed=0)
    with pytest.raises(ArgumentError):
        simulate_hitting(coupled, [1], 10.0, 10, seed=0)
    with pytest.raises(ArgumentError):
        simulate_hitting(coupled, [0.5, 1], 10.0, 10, seed=0)
    with pytest.raises(ResourceError):
        verify_increments(coupled, [1, 1], [1, 1], horizon=0.01, n=100, seed=0)


def test_record_serializes(death):
    rec = verify_laplace_T(death, [1], [0.5], horizon=20, n=1000, seed=0)
    out = rec.to_dict()
    assert out["check"] == "laplace_T" and out["mc"]["n"] == 1000 and "pass" in out
