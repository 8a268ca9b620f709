import math

import numpy as np
import pytest

from spalf.errors import ArgumentError
from spalf.kemperman import (TruncatedExponentialSampler, TruncatedGammaSampler, brownian2d_density,
                             first_passage_density_formula, kemperman_d1_analytic, lattice_product_form,
                             levy_measure_d1, verify_kemperman_theorem)

# (a, q, r, t) -> inverse Gaussian density, mpmath at 25 digits
IG_VALUES = {(-1, 1, 1, 0.5): 0.87878257893544479409, (-1, 1, 1, 2): 0.10984782236693059926,
             (0.5, 2, 1.5, 1): 0.15566531153272301375, (-2, 0.5, 0.3, 0.1): 4.843026776146085211}
# 1 / (2 e^{0.8} - 1), mpmath
DEATH_PRODUCT_FORM = 0.2897642077008448186


@pytest.mark.parametrize("a,q,r,t", sorted(IG_VALUES))
def test_d1_density_values(a, q, r, t):
    out = kemperman_d1_analytic(a, q, r, [t])
    assert out["formula"][0] == pytest.approx(IG_VALUES[(a, q, r, t)], rel=1e-12)
    assert out["inverse_gaussian"][0] == pytest.approx(IG_VALUES[(a, q, r, t)], rel=1e-12)


@pytest.mark.parametrize("a,q,r", [(-1, 1, 1), (0.5, 2, 1.5), (0.0, 1, 2)])
def test_d1_mass(a, q, r):
    out = kemperman_d1_analytic(a, q, r, [1.0])
    assert abs(out["mass"] - out["mass_expected"]) <= 1e-6


def test_d1_arguments():
    with pytest.raises(ArgumentError):
        kemperman_d1_analytic(-1, 0, 1, [1.0])
    with pytest.raises(ArgumentError):
        kemperman_d1_analytic(-1, 1, 1, [0.0])


def test_levy_measure_half_stable():
    out = levy_measure_d1(0.0, 1.0, [0.5, 1.0], [0.1, 1.0, 10.0])
    assert out["envelope_ok"]
    for row in out["exponent"]:
        assert row["quadrature"] == pytest.approx(math.sqrt(2 * row["lam"]), abs=1e-9)


def test_levy_measure_negative_drift():
    # mpmath quadrature: sqrt(5) - 1 at lam = 2, a = -1, q = 1
    (row,) = levy_measure_d1(-1.0, 1.0, [1.0], [2.0])["exponent"]
    assert row["quadrature"] == pytest.approx(math.sqrt(5) - 1, abs=1e-9)


def test_density_formula_d1_is_inverse_gaussian():
    dens, _ = brownian2d_density(-1, -1, 0, 0, 1, 1)
    d1 = lambda t, xhat: math.exp(-(xhat[0, 0] + t[0]) ** 2 / (2 * t[0])) / math.sqrt(2 * math.pi * t[0])
    assert first_passage_density_formula(d1, [1.0], [0.5]) == pytest.approx(IG_VALUES[(-1, 1, 1, 0.5)], rel=1e-12)


def test_density_formula_factorizes_without_coupling():
    dens, off = brownian2d_density(-1, -1, 0, 0, 1, 1)
    got = first_passage_density_formula(dens, [1.0, 1.0], [0.5, 2.0], point_mass=off)
    assert got == pytest.approx(IG_VALUES[(-1, 1, 1, 0.5)] * IG_VALUES[(-1, 1, 1, 2)], rel=1e-12)


def test_density_formula_with_coupling_is_positive():
    dens, off = brownian2d_density(-1, -1, 0.5, 0.5, 1, 1)
    assert first_passage_density_formula(dens, [1.0, 1.0], [1.0, 1.0], point_mass=off) > 0


def test_samplers_are_normalized():
    rng = np.random.default_rng(0)
    for sampler in (TruncatedGammaSampler(), TruncatedExponentialSampler(0.5)):
        t = sampler.sample(rng, 200_000, 1, 5.0)
        assert np.all((t > 0) & (t <= 5.0))
        # E[1 / density] over the sampler is the interval length
        w = np.exp(-sampler.log_density(t, 5.0))
        assert abs(w.mean() - 5.0) <= 4 * w.std(ddof=1) / math.sqrt(w.size)


def test_product_form_death(death):
    assert lattice_product_form(death, [1.0], [1.0], 0.2) == pytest.approx(DEATH_PRODUCT_FORM, rel=1e-10)


def test_three_way_death(death):
    rec = verify_kemperman_theorem(death, [1.0], [1.0], 0.2, horizon=30, n=100_000, seed=3)
    lhs, rhs, pf = rec
    assert pf == pytest.approx(DEATH_PRODUCT_FORM, rel=1e-10)
    assert rec.passed, rec.to_dict()


def test_three_way_coupled(coupled):
    rec = verify_kemperman_theorem(coupled, [1.0, 1.0], [1.0, 0.5], [[0.1, 0.1], [0.05, 0.0]],
                                   horizon=30, n=100_000, seed=4)
    assert rec.passed, rec.to_dict()
