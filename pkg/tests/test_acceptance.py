"""The ten acceptance criteria at their stated sizes and tolerances.

Each test records a one-line verdict; the lines are printed in the terminal
summary (see ``conftest.py``), and also to stdout when run with ``-s``.
"""

import math
import random
import time

import numpy as np
import pytest

from spalf.exponent import ExponentOracle, Jump, ModelSpec, eval_phi
from spalf.inversion import (check_hypothesis_H, classify_drift, example2d_closed_form, example2d_model,
                             invert_exponent, phi_at_zero)
from spalf.kemperman import kemperman_d1_analytic, levy_measure_d1, verify_kemperman_theorem
from spalf.lamperti import extinction_probability, load_errors
from spalf.lattice import approximate_levy, ballot_exact
from spalf.montecarlo import verify_bivariate_laplace, verify_finiteness, verify_laplace_T
from spalf.paths import check_dominance, check_infimum_property, smallest_solution

from helpers import brownian2d, coupled_model, death_model, random_ballot_instance, random_example2d, \
    random_model, walk_model
from test_paths import brute_force

pytestmark = pytest.mark.acceptance

VERDICTS: dict = {}


def record(number: int, ok: bool, detail: str, elapsed: float, budget: float):
    ok = bool(ok) and elapsed <= budget
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s / {budget:.0f}s]"
    VERDICTS[number] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
def test_criterion_01_ballot_identity():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    bad, positive = 0, 0
    for _ in range(220):
        law, n, x = random_ballot_instance(rng)
        lhs, rhs = ballot_exact(law, n, x)
        bad += lhs != rhs
        positive += lhs > 0
    record(1, bad == 0 and positive > 50, f"220 instances, {bad} mismatches, {positive} with positive mass",
           time.perf_counter() - t0, 60)


def test_criterion_02_inversion_round_trip():
    t0 = time.perf_counter()
    rng = random.Random(7)
    models, worst = 0, 0.0
    while models < 60:
        model = random_model(rng, rng.randint(1, 3))
        if not check_hypothesis_H(model)[0]:
            continue
        models += 1
        o = ExponentOracle(model=model)
        for _ in range(10):
            lam = np.array([rng.uniform(0.01, 10) for _ in range(model.d)])
            x = invert_exponent(o, lam).value
            worst = max(worst, float(np.max(np.abs(eval_phi(o, x) - lam) / (1 + lam))))
    record(2, worst <= 1e-8, f"{models} models x 10 targets, worst scaled residual {worst:.2e}",
           time.perf_counter() - t0, 30)


def test_criterion_03_example2d():
    t0 = time.perf_counter()
    rng = random.Random(11)
    params = [random_example2d(rng) for _ in range(17)] + [random_example2d(rng, boundary=True) for _ in range(3)]
    worst_phi = worst_rho = 0.0
    inconsistent = 0
    for p in params:
        model = example2d_model(*p)
        c = classify_drift(model)
        ex = example2d_closed_form(*p)
        worst_rho = max(worst_rho, abs(ex.rho - c.rho))
        if c.irreducible:
            inconsistent += (bool(np.all(c.phi0 == 0)) != (c.rho <= 1e-9))
        for _ in range(10):
            lam = [rng.uniform(0.05, 5), rng.uniform(0.05, 5)]
            got = example2d_closed_form(*p, lam=lam).phi
            worst_phi = max(worst_phi, float(np.max(np.abs(got - invert_exponent(model, lam).value))))
    ok = worst_phi <= 1e-8 and worst_rho <= 1e-9 and inconsistent == 0
    record(3, ok, f"20 sets (3 on a1a2=a12a21) x 10 points, |dphi| {worst_phi:.1e}, |drho| {worst_rho:.1e}, "
                  f"{inconsistent} inconsistent", time.perf_counter() - t0, 60)


# ---------------------------------------------------------------------------
def laplace_suite():
    """(name, model, r, lam, mu, horizon) for the six lattice models."""
    crit2 = ModelSpec(drift=[[0, 0], [0, 0]], k=1,
                      jumps=[[Jump(1, (-1, 0)), Jump(1, (0, 1))], [Jump(1, (0, -1)), Jump(1, (1, 0))]])
    super2 = ModelSpec(drift=[[0, 0], [0, 0]], k=1,
                       jumps=[[Jump(1, (-1, 0)), Jump(2, (0, 1))], [Jump(1, (0, -1)), Jump(2, (1, 0))]])
    return [
        ("d1 subcritical", walk_model(0.5, 1.0), [2], [0.5], 0.1, 80.0),
        ("d1 critical", walk_model(1.0, 1.0), [1], [0.5], 0.1, 400.0),
        ("d1 supercritical", walk_model(2 / 3, 1 / 3), [1], [0.5], 0.1, 200.0),
        ("d2 subcritical", coupled_model(), [2, 1], [0.5, 1.0], [[0.1, 0.1], [0.05, 0.0]], 80.0),
        ("d2 critical", crit2, [1, 1], [0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 300.0),
        ("d2 supercritical", super2, [1, 1], [1.0, 1.0], [[0.1, 0.0], [0.0, 0.1]], 100.0),
    ]


def test_criterion_04_laplace_identities():
    t0 = time.perf_counter()
    n = 100_000
    failures, lines = [], []
    for i, (name, model, r, lam, mu, H) in enumerate(laplace_suite()):
        recs = [verify_laplace_T(model, r, lam, H, n, seed=100 + i),
                verify_finiteness(model, r, H, n, seed=200 + i),
                verify_bivariate_laplace(model, r, lam, mu, H, n, seed=300 + i)]
        for rec in recs:
            z = (rec.mc.mean - rec.predicted) / rec.mc.stderr if rec.mc.stderr > 0 else 0.0
            lines.append(f"{name}/{rec.check}: z={z:+.2f}")
            if not rec.passed:
                failures.append(f"{name}/{rec.check}")
    detail = f"18 checks at n=1e5, failures: {failures or 'none'}"
    print("\n".join(lines))
    record(4, not failures, detail, time.perf_counter() - t0, 300)


def kemperman_configs():
    bd = ModelSpec(drift=[[0]], k=2, jumps=[[Jump(1, (-0.5,)), Jump(0.5, (0.5,))]])
    bm = approximate_levy(brownian2d(), 10)
    return [
        ("death k=1", death_model(), [1.0], [1.0], 0.2, 30.0),
        ("birth-death k=2", bd, [0.5], [1.0], 0.1, 30.0),
        ("coupled d=2", coupled_model(), [1.0, 1.0], [1.0, 0.5], [[0.1, 0.1], [0.05, 0.0]], 30.0),
        ("brownian d=2 k=10", bm, [1.0, 1.0], [1.0, 1.0], 0.0, 20.0),
    ]


def test_criterion_05_kemperman_three_way():
    t0 = time.perf_counter()
    failures, lines = [], []
    for i, (name, model, alpha, lam, mu, H) in enumerate(kemperman_configs()):
        rec = verify_kemperman_theorem(model, alpha, lam, mu, H, 1_000_000, seed=40 + i)
        lines.append(f"{name}: lhs {rec.lhs.mean:.5f}+-{rec.lhs.stderr:.5f} rhs {rec.rhs.mean:.5f}"
                     f"+-{rec.rhs.stderr:.5f} product {rec.product_form:.5f}")
        if not rec.passed:
            failures.append(name)
    print("\n".join(lines))
    record(5, not failures, f"4 configurations at n=1e6, failures: {failures or 'none'}",
           time.perf_counter() - t0, 600)


def test_criterion_06_kemperman_d1():
    t0 = time.perf_counter()
    t_grid = np.linspace(0.02, 10.0, 100)
    worst_d, worst_m = 0.0, 0.0
    for a, q, r in [(-1.0, 1.0, 1.0), (-0.3, 2.0, 0.5), (0.5, 1.0, 1.0), (1.0, 0.5, 2.0), (-2.0, 0.25, 3.0)]:
        out = kemperman_d1_analytic(a, q, r, t_grid)
        worst_d = max(worst_d, float(np.max(np.abs(out["formula"] - out["inverse_gaussian"]))))
        assert out["mass_expected"] == pytest.approx(1.0 if a < 0 else math.exp(-r * 2 * abs(a) / q))
        worst_m = max(worst_m, abs(out["mass"] - out["mass_expected"]))
    record(6, worst_d <= 1e-10 and worst_m <= 1e-6,
           f"5 triples x 100 t-points, density gap {worst_d:.1e}, mass gap {worst_m:.1e}",
           time.perf_counter() - t0, 60)


def test_criterion_07_levy_measure():
    t0 = time.perf_counter()
    lam_grid = np.round(np.geomspace(0.1, 10, 21), 12)
    worst = 0.0
    for a in (-1.0, 0.0):
        out = levy_measure_d1(a, 1.0, [1.0], lam_grid)
        for row in out["exponent"]:
            expected = math.sqrt(a * a + 2 * row["lam"]) + a  # phi(0) = 0 for a <= 0
            if a == 0.0:
                expected = math.sqrt(2 * row["lam"])
            worst = max(worst, abs(row["quadrature"] - expected), abs(row["closed_form"] - expected))
    record(7, worst <= 1e-5, f"a in {{-1, 0}}, 21 lambdas in [0.1, 10], worst gap {worst:.1e}",
           time.perf_counter() - t0, 60)


def test_criterion_08_smallest_solution():
    from hypothesis import given, settings, strategies as st
    from test_paths import lattice_bundles

    t0 = time.perf_counter()
    counts = {"oracle": 0, "monotone": 0, "parts": 0}
    bad = []

    @settings(max_examples=500, database=None, derandomize=True)
    @given(lattice_bundles(), st.data())
    def run(case, data):
        paths, r = case
        res = smallest_solution(paths, r)
        counts["oracle"] += 1
        if res.s != brute_force(paths, r):
            bad.append("oracle")
        lower = tuple(type(x)(data.draw(st.integers(0, int(x * paths.k)))) / paths.k for x in r)
        counts["monotone"] += 1
        if not all(a <= b for a, b in zip(smallest_solution(paths, lower).s, res.s)):
            bad.append("monotone")
        grids = [[0.0, *paths.times[j], math.inf] for j in range(paths.d)]
        u = tuple(data.draw(st.sampled_from(g)) for g in grids)
        counts["parts"] += 1
        if not (check_dominance(paths, r, u, res) and check_infimum_property(paths, res)):
            bad.append("parts")

    run()
    ok = not bad and min(counts.values()) >= 500
    record(8, ok, f"{counts['oracle']} bundles, {counts['monotone']} ordered pairs, failures {bad or 'none'}",
           time.perf_counter() - t0, 30)


def test_criterion_09_lamperti():
    t0 = time.perf_counter()
    model = coupled_model()
    med = [float(np.nanmedian(load_errors(model, [2, 1], h, 400.0, 100, seed=9, horizon=400.0)))
           for h in (4e-3, 2e-3, 1e-3)]
    ratios = [med[1] / med[0], med[2] / med[1]]
    halves = all(0.3 <= x <= 0.7 for x in ratios)
    recs = [extinction_probability(walk_model(2 / 3, 1 / 3), [1], 50.0, 10_000, seed=91),
            extinction_probability(walk_model(2 / 3, 1 / 3), [2], 50.0, 10_000, seed=92),
            extinction_probability(walk_model(4 / 3, 2 / 3, k=2), [1], 50.0, 10_000, seed=93)]
    ext = ", ".join(f"{r.mc.mean:.4f} vs {r.predicted:.4f}" for r in recs)
    record(9, halves and all(r.passed for r in recs),
           f"error ratios {ratios[0]:.2f}, {ratios[1]:.2f}; extinction {ext}", time.perf_counter() - t0, 300)


def test_criterion_10_lattice_approximation():
    t0 = time.perf_counter()
    model = brownian2d()
    exact = ExponentOracle(model=model)
    grid = [np.array([x, y]) for x in (0.25, 1.0, 3.0) for y in (0.25, 1.0, 3.0)]
    errs = {k: [float(np.max(np.abs(eval_phi(ExponentOracle(model=approximate_levy(model, k)), lam)
                                    - eval_phi(exact, lam)))) for lam in grid] for k in (10, 20, 40, 80)}
    monotone = all(errs[10][i] > errs[20][i] > errs[40][i] > errs[80][i] for i in range(len(grid)))
    lattice = approximate_levy(model, 80)
    lam, r = [1.0, 1.0], [1.0, 1.0]
    limit = math.exp(-float(np.dot(example2d_closed_form(-1, -1, 0.5, 0.5, 1, 1, lam=lam).phi, r)))
    own = math.exp(-float(np.dot(invert_exponent(lattice, lam).value, r)))
    band = 2.0 * abs(own - limit)
    rec = verify_laplace_T(lattice, r, lam, 15.0, 50_000, seed=10, predicted=limit, band=band)
    record(10, monotone and rec.passed,
           f"monotone={monotone}; k=80 MC {rec.mc.mean:.5f}+-{rec.mc.stderr:.5f} vs limit {limit:.5f} "
           f"(band {band:.1e})", time.perf_counter() - t0, 300)
