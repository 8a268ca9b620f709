"""Image-measure identity for first-passage fields and its one-dimensional forms.

On the lattice ``Z/k`` the identity reads, for ``r`` ranging over the strictly
positive grid,

    sum_r k^-d e^{-<alpha, r>} E[e^{-<lam, T_r> - <<mu, X>>}; T_r finite]
        = int e^{<alpha, x 1> - <lam, t> - <<mu, x>>} det(-x) / prod(t) P(X_t in dx) dt
        = prod_j [k (exp((alpha_j + Phi_j) / k) - 1)]^-1 ,

where ``x 1`` is the vector of row sums and ``Phi = Phi(lam, mu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .errors import ArgumentError, NumericError, ResourceError
from .exponent import ExponentOracle, ModelSpec, _as_shift
from .inversion import big_phi
from .montecarlo import MCEstimate, TAG_FIRST, TAG_MAIN, _lattice, sample_field_at, simulate_hitting


def _grid(t_grid) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.size == 0 or np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise ArgumentError("time grid must hold finite positive values")
    return t


def _normal_pdf(x, mean, var):
    return np.exp(-(x - mean) ** 2 / (2.0 * var)) / np.sqrt(2.0 * math.pi * var)


# ----------------------------------------------------------------------------
# d = 1, Brownian motion with drift
# ----------------------------------------------------------------------------
def kemperman_d1_analytic(a: float, q: float, r: float, t_grid) -> dict:
    """First-passage density of level ``-r`` two ways, plus its total mass.

    ``formula`` is ``(r/t) p_t(-r)`` with ``p_t`` the N(a t, q t) density and
    ``inverse_gaussian`` the textbook density.  ``mass_expected`` is
    ``exp(-r (a + |a|) / q)``.
    """
    if not q > 0:
        raise ArgumentError("q must be positive")
    if not r > 0:
        raise ArgumentError("r must be positive")
    t = _grid(t_grid)
    formula = (r / t) * _normal_pdf(-r, a * t, q * t)
    ig = np.sqrt(r * r / (2.0 * math.pi * q * t ** 3)) * np.exp(-(r + a * t) ** 2 / (2.0 * q * t))
    density = lambda s: (r / s) * math.exp(-(r + a * s) ** 2 / (2.0 * q * s)) / math.sqrt(2.0 * math.pi * q * s)
    mass, err = integrate.quad(density, 0.0, math.inf, epsabs=1e-12, epsrel=1e-10, limit=500)
    return {"t": t, "formula": formula, "inverse_gaussian": ig, "mass": mass, "mass_error": err,
            "mass_expected": math.exp(-r * (a + abs(a)) / q)}


def levy_measure_d1(a: float, q: float, t_grid, lam_grid: Sequence[float] = ()) -> dict:
    """Density ``p_t(0)/t`` of the first-passage subordinator and its exponent by quadrature.

    For each ``lam`` the integral of ``1 - e^{-lam t}`` against the density is
    compared with ``(sqrt(a^2 + 2 q lam) - |a|) / q``.
    """
    if not q > 0:
        raise ArgumentError("q must be positive")
    t = _grid(t_grid)
    density = np.exp(-a * a * t / (2.0 * q)) / np.sqrt(2.0 * math.pi * q * t) / t
    envelope = np.exp(-a * a * t / (2.0 * q))
    norm = 1.0 / math.sqrt(2.0 * math.pi * q)
    rows = []
    for lam in lam_grid:
        lam = float(lam)
        if lam < 0:
            raise ArgumentError("lambda must be nonnegative")

        # t = u^2 removes the t^{-3/2} singularity at the origin
        def integrand(u):
            if u == 0.0:
                return 2.0 * lam * norm
            s = u * u
            return 2.0 * norm * (-math.expm1(-lam * s)) * math.exp(-a * a * s / (2.0 * q)) / s

        val, err = integrate.quad(integrand, 0.0, math.inf, epsabs=1e-13, epsrel=1e-11, limit=500)
        if not math.isfinite(val) or err > 1e-7:
            raise NumericError(f"Levy measure quadrature did not converge at lambda={lam}")
        rows.append({"lam": lam, "quadrature": val, "closed_form": (math.sqrt(a * a + 2 * q * lam) - abs(a)) / q,
                     "error_estimate": err})
    return {"t": t, "density": density, "envelope_ok": bool(np.all(density * t * np.sqrt(2 * math.pi * q * t)
                                                                   <= envelope * (1 + 1e-12))),
            "exponent": rows}


def first_passage_density_formula(density: Callable, r, t, point_mass: Optional[Callable] = None,
                                  limit: int = 200) -> float:
    """Density of ``T_r`` at ``t`` from the determinant formula, for ``d <= 2``.

    ``density(t, xhat)`` is the density of the field at ``t`` in the hatted
    coordinates (off-diagonal entries plus row sums on the diagonal).  With
    ``point_mass(t)`` returning the deterministic off-diagonal entries, the
    off-diagonal integral collapses to one evaluation and ``density`` is read as
    the density of the row sums alone.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    d = r.size
    if t.shape != (d,) or np.any(t <= 0):
        raise ArgumentError("t must be positive with one entry per coordinate")
    if np.any(r < 0):
        raise ArgumentError("r must be nonnegative")
    if d > 2:
        raise ArgumentError("the quadrature is implemented for d <= 2")

    def integrand(off: np.ndarray) -> float:
        X = off.copy()
        np.fill_diagonal(X, 0.0)
        np.fill_diagonal(X, -r - X.sum(axis=1))
        xhat = off.copy()
        np.fill_diagonal(xhat, -r)
        det = float(np.linalg.det(-X)) if d > 1 else float(-X[0, 0])
        return det / float(np.prod(t)) * float(density(t, xhat))

    if d == 1:
        return integrand(np.zeros((1, 1)))
    if point_mass is not None:
        return integrand(np.asarray(point_mass(t), dtype=float))

    def f(x21, x12):
        return integrand(np.array([[0.0, x12], [x21, 0.0]]))

    val, err = integrate.dblquad(f, 0.0, math.inf, 0.0, math.inf, epsabs=1e-10, epsrel=1e-8)
    if not math.isfinite(val) or err > 1e-6 * (1 + abs(val)):
        raise ResourceError("determinant-formula quadrature exceeded its budget")
    return val


def brownian2d_density(a1, a2, a12, a21, q1, q2):
    """Row-sum density and deterministic off-diagonals of the 2D Brownian field."""

    def off(t):
        return np.array([[0.0, a12 * t[1]], [a21 * t[0], 0.0]])

    def dens(t, xhat):
        m1 = a1 * t[0] + a12 * t[1]
        m2 = a2 * t[1] + a21 * t[0]
        return float(_normal_pdf(xhat[0, 0], m1, q1 * t[0]) * _normal_pdf(xhat[1, 1], m2, q2 * t[1]))

    return dens, off


# ----------------------------------------------------------------------------
# samplers for the time integral
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class TruncatedGammaSampler:
    """Product of Gamma(shape, 1) laws truncated to (0, H); shape 1/2 keeps the estimator's variance finite."""

    shape: float = 0.5

    def sample(self, rng: np.random.Generator, n: int, d: int, horizon: float) -> np.ndarray:
        top = special.gammainc(self.shape, horizon)
        u = rng.uniform(size=(n, d))
        return np.clip(special.gammaincinv(self.shape, u * top), 1e-300, horizon)

    def log_density(self, t: np.ndarray, horizon: float) -> np.ndarray:
        top = special.gammainc(self.shape, horizon)
        per = (self.shape - 1.0) * np.log(t) - t - special.gammaln(self.shape) - math.log(top)
        return per.sum(axis=1)


@dataclass(frozen=True)
class TruncatedExponentialSampler:
    """Product of Exp(rate) laws truncated to (0, H).  Its rhs estimator has infinite variance."""

    rate: float = 1.0

    def sample(self, rng: np.random.Generator, n: int, d: int, horizon: float) -> np.ndarray:
        top = -math.expm1(-self.rate * horizon)
        u = rng.uniform(size=(n, d))
        return np.clip(-np.log1p(-u * top) / self.rate, 1e-300, horizon)

    def log_density(self, t: np.ndarray, horizon: float) -> np.ndarray:
        top = -math.expm1(-self.rate * horizon)
        return (math.log(self.rate) - self.rate * t - math.log(top)).sum(axis=1)


# ----------------------------------------------------------------------------
# three-way check on the lattice
# ----------------------------------------------------------------------------
@dataclass
class KempermanRecord:
    lhs: MCEstimate
    rhs: MCEstimate
    product_form: float
    truncation_bias: float
    passed: bool
    model_hash: str
    params: dict
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.product_form))

    def to_dict(self) -> dict:
        out = {"check": "kemperman", "model_hash": self.model_hash, "params": self.params,
               "lhs": self.lhs.to_dict(), "rhs": self.rhs.to_dict(), "product_form": self.product_form,
               "truncation_bias": self.truncation_bias, "pass": self.passed}
        out.update(self.extra)
        return out


def lattice_product_form(model: ModelSpec, alpha, lam, mu) -> float:
    k = model.k
    Phi = big_phi(ExponentOracle(model=model), lam, mu)
    return float(np.prod(1.0 / (k * np.expm1((np.asarray(alpha, dtype=float) + Phi) / k))))


def _chunks(n: int, size: int):
    for s in range(0, n, size):
        yield s, min(size, n - s)


def verify_kemperman_theorem(model: ModelSpec, alpha, lam, mu, horizon: float, n: int, seed: int,
                             t_sampler=None, workers: int = 1, backend=None,
                             chunk: int = 200_000) -> KempermanRecord:
    _lattice(model)
    d, k = model.d, model.k
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if alpha.size == 1:
        alpha = np.full(d, alpha[0])
    if lam.size == 1:
        lam = np.full(d, lam[0])
    if alpha.shape != (d,) or np.any(alpha <= 0):
        raise ArgumentError("alpha must be positive for the sampled r-integral")
    mu = _as_shift(mu, d)
    n = int(n)
    sampler = TruncatedGammaSampler() if t_sampler is None else t_sampler
    oracle = ExponentOracle(model=model)
    pf = lattice_product_form(model, alpha, lam, mu)
    floor = np.array([oracle.phi(mu[:, j])[j] for j in range(d)])
    eps = 0.5 * float(np.min(lam - floor))
    bias = math.exp(-eps * horizon) * lattice_product_form(model, alpha, lam - eps, mu) if eps > 0 else pf

    # lhs: r on the positive grid, P(m) proportional to exp(-alpha m / k)
    qgeo = np.exp(-alpha / k)
    weight = float(np.prod(1.0 / (k * np.expm1(alpha / k))))
    lhs = MCEstimate(seed_base=seed)
    rng_r = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    m_all = rng_r.geometric(1.0 - qgeo, size=(n, d)).astype(np.int64)
    smp = simulate_hitting(model, None, horizon, n, seed, TAG_MAIN, workers, backend, m_all)
    ok = smp.all_hit
    expo = -(smp.times * lam).sum(axis=1) - np.einsum("ij,aij->a", mu, smp.X)
    lhs = MCEstimate.from_values(np.where(ok, weight * np.exp(np.where(ok, expo, 0.0)), 0.0), ~ok, seed)

    # rhs: t from the sampler, X_t simulated at t
    rhs = MCEstimate(seed_base=seed)
    sq_w = 0.0
    min_det = math.inf
    for c, (start, m) in enumerate(_chunks(n, chunk)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), TAG_FIRST, c]))
        t = sampler.sample(rng, m, d, horizon)
        Xu = sample_field_at(model, t, rng)
        rows = Xu.sum(axis=2)
        adm = np.all(rows < 0, axis=1)
        x = Xu / k
        det = np.zeros(m)
        if adm.any():
            det[adm] = np.linalg.det(-x[adm]) if d > 1 else -x[adm, 0, 0]
            min_det = min(min_det, float(det[adm].min()))
        ex = x[adm]
        val = np.zeros(m)
        val[adm] = np.exp(ex.sum(axis=2) @ alpha - t[adm] @ lam - np.einsum("ij,aij->a", mu, ex)
                          - sampler.log_density(t[adm], horizon)) * det[adm] / np.prod(t[adm], axis=1)
        rhs = rhs + MCEstimate.from_values(val, None, seed)
    if min_det < -1e-9:
        raise NumericError(f"negative determinant {min_det} on the admissible set")
    ess = rhs.total ** 2 / rhs.total_sq if rhs.total_sq > 0 else 0.0
    if ess < n / 100:
        raise ResourceError(f"effective sample size {ess:.0f} < n/100; choose a different t_sampler")
    se = math.hypot(lhs.stderr, rhs.stderr)
    passed = (abs(lhs.mean - rhs.mean) <= 4 * se
              and abs(lhs.mean - pf) <= 4 * lhs.stderr + bias
              and abs(rhs.mean - pf) <= 4 * rhs.stderr + bias)
    params = {"alpha": alpha.tolist(), "lam": lam.tolist(), "mu": mu.tolist(), "horizon": horizon,
              "n": n, "seed": seed, "t_sampler": type(sampler).__name__}
    return KempermanRecord(lhs, rhs, pf, bias, passed, model.content_hash(), params, {"rhs_ess": ess})
