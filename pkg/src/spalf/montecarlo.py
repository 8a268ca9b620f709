"""Seeded Monte Carlo for lattice first-passage fields and the exponent identities.

Replicate ``i`` of a run with seed ``s`` is a pure function of ``(s, tag, i)``, so
results are reproducible bit for bit and do not depend on how replicates are split
across workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from . import _kernels
from .errors import ArgumentError, ResourceError
from .exponent import ExponentOracle, ModelSpec, _as_shift
from .inversion import big_phi, invert_exponent, phi_at_zero
from .paths import CENSORED, HIT, HittingResult, PathBundle

CHUNK = 8192
KS_THRESHOLD = 1e-4
MIN_UNCENSORED = 1000

# stream tags keep independent arms of one check apart
TAG_MAIN, TAG_FIRST, TAG_SECOND, TAG_AXES = 0, 1, 2, 3


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with its standard error; a commutative monoid under ``+``."""

    total: float = 0.0
    total_sq: float = 0.0
    n: int = 0
    censored: int = 0
    seed_base: Optional[int] = None

    @classmethod
    def from_values(cls, values, censored=None, seed_base=None) -> "MCEstimate":
        v = np.asarray(values, dtype=float)
        c = 0 if censored is None else int(np.count_nonzero(censored))
        return cls(float(v.sum()), float((v * v).sum()), int(v.size), c, seed_base)

    def __add__(self, other: "MCEstimate") -> "MCEstimate":
        seed = self.seed_base if self.seed_base is not None else other.seed_base
        return MCEstimate(self.total + other.total, self.total_sq + other.total_sq,
                          self.n + other.n, self.censored + other.censored, seed)

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else math.nan

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return math.nan if self.n == 0 else 0.0
        var = (self.total_sq - self.total * self.total / self.n) / (self.n - 1)
        return math.sqrt(max(var, 0.0) / self.n)

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n,
                "seed_base": self.seed_base, "censored_fraction": self.censored_fraction}


@dataclass
class VerificationRecord:
    check: str
    model_hash: str
    params: dict
    mc: MCEstimate
    predicted: float
    bias_bound: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.mc, self.predicted))

    def to_dict(self) -> dict:
        out = {"check": self.check, "model_hash": self.model_hash, "params": self.params,
               "mc": self.mc.to_dict(), "predicted": self.predicted,
               "bias_bound": self.bias_bound, "pass": self.passed}
        out.update(self.extra)
        return out


def agrees(mc: MCEstimate, predicted: float, bias: float = 0.0, band: float = 0.0, z: float = 4.0) -> bool:
    return abs(mc.mean - predicted) <= z * mc.stderr + bias + band


# ----------------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------------
def _lattice(model: ModelSpec) -> ModelSpec:
    if not isinstance(model, ModelSpec) or not model.is_lattice:
        raise ArgumentError("Monte Carlo sampling needs a lattice model")
    return model


def _r_units(model: ModelSpec, r) -> np.ndarray:
    vals = np.atleast_1d(np.asarray(r, dtype=object))
    if vals.shape != (model.d,):
        raise ArgumentError(f"r must have length {model.d}")
    out = []
    for x in vals:
        fx = Fraction(x) if not isinstance(x, float) else Fraction(x).limit_denominator(10**9)
        if fx < 0:
            raise ArgumentError("r must be nonnegative")
        u = fx * model.k
        if u.denominator != 1:
            raise ArgumentError(f"level {x} is off the 1/{model.k} grid")
        out.append(int(u))
    return np.array(out, dtype=np.int64)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class HittingSample:
    """First-passage outcomes of ``n`` replicates; ``X`` in units of the model (not 1/k)."""

    times: np.ndarray
    X: np.ndarray
    hit: np.ndarray
    counts: np.ndarray

    @property
    def all_hit(self) -> np.ndarray:
        return self.hit.all(axis=1)


def simulate_hitting(model: ModelSpec, r, horizon: float, n: int, seed: int, tag: int = TAG_MAIN,
                     workers: int = 1, backend=None, r_units: Optional[np.ndarray] = None) -> HittingSample:
    """First passage below ``-r`` for ``n`` replicates; ``r_units`` overrides ``r`` per replicate."""
    _lattice(model)
    if not horizon > 0:
        raise ArgumentError("horizon must be positive")
    n = int(n)
    if n < 1:
        raise ArgumentError("n must be positive")
    key = _kernels.seed_key(seed, tag)
    tables = model.lattice_tables()
    if r_units is None:
        ru = np.broadcast_to(_r_units(model, r), (n, model.d))
    else:
        ru = np.asarray(r_units, dtype=np.int64)
        if ru.shape != (n, model.d) or np.any(ru < 0):
            raise ArgumentError("per-replicate levels must be a nonnegative (n, d) array")
    starts = list(range(0, n, CHUNK))

    def run(s):
        return _kernels.first_passage(key, s, ru[s:s + CHUNK], horizon, tables, backend)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    counts = np.concatenate([p[0] for p in parts])
    times = np.concatenate([p[1] for p in parts])
    X = np.concatenate([p[2] for p in parts]) / model.k
    hit = np.concatenate([p[3] for p in parts])
    return HittingSample(times, X, hit, counts)


def replicate_paths(model: ModelSpec, horizon: float, seed: int, index: int, tag: int = TAG_MAIN) -> PathBundle:
    """The driver path of one replicate on ``[0, horizon]``, as consumed by the kernels."""
    _lattice(model)
    key = _kernels.seed_key(seed, tag)
    events = _kernels.replicate_events(key, int(index), horizon, model.lattice_tables())
    times = tuple(ev[0] for ev in events)
    deltas = tuple(ev[1] for ev in events)
    return PathBundle(horizon, np.zeros((model.d, model.d)), times, deltas, model.k)


def sample_hitting(model: ModelSpec, r, horizon: float, n: int, seed: int, backend=None) -> Iterator[HittingResult]:
    """Per-replicate hitting results with the field at the hitting point."""
    _lattice(model)
    ru = _r_units(model, r)
    d, k = model.d, model.k
    key = _kernels.seed_key(seed, TAG_MAIN)
    tables = model.lattice_tables()
    for start in range(0, int(n), CHUNK):
        m = min(CHUNK, int(n) - start)
        counts, times, X, hit = _kernels.first_passage(key, start, np.broadcast_to(ru, (m, d)), horizon, tables,
                                                      backend)
        for a in range(m):
            s = tuple(float(times[a, j]) if hit[a, j] else math.inf for j in range(d))
            status = tuple(HIT if hit[a, j] else CENSORED for j in range(d))
            matrix = tuple(tuple(Fraction(int(X[a, i, j]), k) for j in range(d)) for i in range(d))
            yield HittingResult(s, status, matrix, int(counts[a].sum()))


def sample_field_at(model: ModelSpec, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample ``X_t`` (units of 1/k) at times ``t`` of shape (n, d); returns (n, d, d) integers."""
    rates, cum, steps, nsup = model.lattice_tables()
    n, d = t.shape
    out = np.zeros((n, d, d), dtype=np.int64)
    for j in range(d):
        if rates[j] <= 0:
            continue
        m = int(nsup[j])
        probs = np.diff(np.concatenate([[0.0], cum[j, :m]]))
        probs = probs / probs.sum()
        N = rng.poisson(rates[j] * t[:, j])
        counts = rng.multinomial(N, probs)
        out[:, :, j] = counts @ steps[j, :m, :]
    return out


# ----------------------------------------------------------------------------
# verifications
# ----------------------------------------------------------------------------
def _vec(x, d, name, positive=False) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.size == 1 and d > 1:
        v = np.full(d, float(v[0]))
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        raise ArgumentError(f"{name} must have length {d}")
    if np.any(v < 0) or (positive and np.any(v <= 0)):
        raise ArgumentError(f"{name} must be {'positive' if positive else 'nonnegative'}")
    return v


def _params(**kw) -> dict:
    out = {}
    for key, val in kw.items():
        if isinstance(val, np.ndarray):
            val = val.tolist()
        out[key] = val
    return out


def verify_laplace_T(model: ModelSpec, r, lam, horizon: float, n: int, seed: int, workers: int = 1,
                     predicted: Optional[float] = None, band: float = 0.0, backend=None) -> VerificationRecord:
    """Compare the mean of ``exp(-<lam, T_r>)`` with ``exp(-<phi^{-1}(lam), r>)``.

    ``predicted`` replaces the model's own prediction (e.g. a continuum limit) and
    ``band`` widens the acceptance window by a declared deterministic bias.
    """
    _lattice(model)
    d = model.d
    lam = _vec(lam, d, "lambda", positive=True)
    rv = _vec([float(Fraction(x)) if isinstance(x, str) else x for x in np.atleast_1d(r)], d, "r")
    if predicted is None:
        phi = invert_exponent(ExponentOracle(model=model), lam).value
        predicted = math.exp(-float(phi @ rv))
    smp = simulate_hitting(model, r, horizon, n, seed, workers=workers, backend=backend)
    ok = smp.all_hit
    vals = np.where(ok, np.exp(-(smp.times * lam).sum(axis=1)), 0.0)
    mc = MCEstimate.from_values(vals, ~ok, seed)
    bias = math.exp(-float(lam.min()) * horizon)
    return VerificationRecord("laplace_T", model.content_hash(),
                              _params(r=rv, lam=lam, horizon=horizon, n=n, seed=seed, band=band),
                              mc, float(predicted), bias, agrees(mc, predicted, bias, band))


def verify_finiteness(model: ModelSpec, r, horizon: float, n: int, seed: int, workers: int = 1,
                      backend=None) -> VerificationRecord:
    """P(all coordinates hit by H) against ``exp(-<phi^{-1}(0), r>)``.

    One simulation serves the whole ladder {H/4, H/2, H}: a replicate hits by
    ``H' <= H`` exactly when it hits by ``H`` with every coordinate at most ``H'``.
    The declared bias is twice the gain from H/4 to H, which bounds the remaining
    gain for tails decaying at least like ``t^{-1/2}``.
    """
    _lattice(model)
    d = model.d
    rv = _vec([float(Fraction(x)) if isinstance(x, str) else x for x in np.atleast_1d(r)], d, "r")
    phi0 = phi_at_zero(ExponentOracle(model=model))
    predicted = math.exp(-float(phi0 @ rv))
    smp = simulate_hitting(model, r, horizon, n, seed, workers=workers, backend=backend)
    ok = smp.all_hit
    tmax = np.where(ok, smp.times.max(axis=1, initial=0.0), np.inf)
    ladder = []
    for frac in (0.25, 0.5, 1.0):
        by = tmax <= frac * horizon
        ladder.append((frac * horizon, MCEstimate.from_values(by.astype(float), ~by, seed)))
    mc = ladder[-1][1]
    bias = 2.0 * max(0.0, mc.mean - ladder[0][1].mean)
    # censoring only lowers the estimate, so the bias window is one-sided
    passed = (mc.mean - predicted <= 4 * mc.stderr) and (predicted - mc.mean <= 4 * mc.stderr + bias)
    extra = {"ladder": [{"horizon": h, "mean": e.mean, "stderr": e.stderr} for h, e in ladder],
             "phi0": phi0.tolist()}
    return VerificationRecord("finiteness", model.content_hash(),
                              _params(r=rv, horizon=horizon, n=n, seed=seed), mc, predicted, bias, passed, extra)


def verify_bivariate_laplace(model: ModelSpec, r, lam, mu, horizon: float, n: int, seed: int, workers: int = 1,
                             backend=None) -> VerificationRecord:
    """Mean of ``exp(-<lam, T_r> - <<mu, X_{T_r}>>)`` on full hits against ``exp(-<r, Phi(lam, mu)>)``."""
    _lattice(model)
    d = model.d
    lam = _vec(lam, d, "lambda")
    mu = _as_shift(mu, d)
    rv = _vec([float(Fraction(x)) if isinstance(x, str) else x for x in np.atleast_1d(r)], d, "r")
    oracle = ExponentOracle(model=model)
    Phi = big_phi(oracle, lam, mu)
    predicted = math.exp(-float(rv @ Phi))
    floor = np.array([oracle.phi(mu[:, j])[j] for j in range(d)])
    eps = 0.5 * float(np.min(lam - floor))
    if eps > 0:
        bias = math.exp(-eps * horizon) * math.exp(-float(rv @ big_phi(oracle, lam - eps, mu)))
    else:
        bias = predicted
    smp = simulate_hitting(model, r, horizon, n, seed, workers=workers, backend=backend)
    ok = smp.all_hit
    # <<mu, X>> is the special product, vectorized over replicates
    expo = -(smp.times * lam).sum(axis=1) - np.einsum("ij,aij->a", mu, smp.X)
    vals = np.where(ok, np.exp(np.where(ok, expo, 0.0)), 0.0)
    mc = MCEstimate.from_values(vals, ~ok, seed)
    return VerificationRecord("bivariate_laplace", model.content_hash(),
                              _params(r=rv, lam=lam, mu=mu, horizon=horizon, n=n, seed=seed),
                              mc, predicted, bias, agrees(mc, predicted, bias),
                              {"Phi": Phi.tolist()})


verify_bivariate = verify_bivariate_laplace


def verify_increments(model: ModelSpec, r, r2, horizon: float, n: int, seed: int, workers: int = 1,
                      backend=None) -> VerificationRecord:
    """KS comparison of ``T_{r+r'}`` with ``T_r + T'_{r'}`` (independent copies).

    Both arms are restricted to outcomes at most ``H`` in every coordinate, which is
    the same event for both laws.  The record's estimate is the smallest p-value.
    """
    _lattice(model)
    d = model.d
    ru1, ru2 = _r_units(model, r), _r_units(model, r2)
    k = model.k
    both = simulate_hitting(model, None, horizon, n, seed, TAG_MAIN, workers, backend,
                            np.broadcast_to(ru1 + ru2, (n, d)))
    first = simulate_hitting(model, None, horizon, n, seed, TAG_FIRST, workers, backend, np.broadcast_to(ru1, (n, d)))
    second = simulate_hitting(model, None, horizon, n, seed, TAG_SECOND, workers, backend,
                              np.broadcast_to(ru2, (n, d)))
    a = both.times[both.all_hit]
    s = first.times + second.times
    s = s[first.all_hit & second.all_hit & np.all(s <= horizon, axis=1)]
    if min(len(a), len(s)) < MIN_UNCENSORED:
        raise ResourceError(f"only {min(len(a), len(s))} uncensored samples; raise n or the horizon")
    pvals, stats = [], []
    for j in range(d):
        if np.ptp(a[:, j]) == 0 and np.ptp(s[:, j]) == 0 and a[0, j] == s[0, j]:
            pvals.append(1.0)
            stats.append(0.0)
            continue
        res = ks_2samp(a[:, j], s[:, j])
        pvals.append(float(res.pvalue))
        stats.append(float(res.statistic))
    extra = {"p_values": pvals, "ks_statistics": stats, "sizes": [int(len(a)), int(len(s))]}
    if d >= 2:
        extra["axis_correlation"] = axis_correlation(model, [Fraction(int(ru1.max() or 1), k)] * d,
                                                     horizon, min(n, 20000), seed, backend)
    mc = MCEstimate.from_values([min(pvals)], None, seed)
    return VerificationRecord("increments", model.content_hash(),
                              _params(r=(ru1 / k).tolist(), r2=(ru2 / k).tolist(), horizon=horizon, n=n, seed=seed),
                              mc, KS_THRESHOLD, 0.0, bool(min(pvals) >= KS_THRESHOLD), extra)


def axis_correlation(model: ModelSpec, r, horizon: float, n: int, seed: int, backend=None) -> list:
    """Empirical correlation between ``T_{r_1 e_1}`` and ``T_{r_2 e_2}`` on one driver.

    The pair is dependent in general; no prediction is attached.
    """
    d = model.d
    ru = _r_units(model, r)
    corr = []
    for i in range(d):
        row = []
        for j in range(d):
            ei = np.zeros(d, dtype=np.int64)
            ej = np.zeros(d, dtype=np.int64)
            ei[i], ej[j] = ru[i], ru[j]
            a = simulate_hitting(model, None, horizon, n, seed, TAG_AXES, 1, backend, np.broadcast_to(ei, (n, d)))
            b = simulate_hitting(model, None, horizon, n, seed, TAG_AXES, 1, backend, np.broadcast_to(ej, (n, d)))
            ok = a.all_hit & b.all_hit
            x, y = a.times[ok, i], b.times[ok, j]
            row.append(float(np.corrcoef(x, y)[0, 1]) if ok.sum() > 2 and np.std(x) > 0 and np.std(y) > 0 else None)
        corr.append(row)
    return corr


# ----------------------------------------------------------------------------
# joint law of (T_r, X_{T_r}) on the lattice
# ----------------------------------------------------------------------------
def joint_law_box_check(model: ModelSpec, r, t_grid, x, n_samples: int, seed: int, width: float = 0.1,
                        horizon: Optional[float] = None, backend=None) -> list:
    """Box-averaged joint density of (T_r, X_{T_r} = x) against its determinant formula.

    Returns one dict per grid point with the two estimates and an agreement flag.
    """
    _lattice(model)
    d, k = model.d, model.k
    xu = np.rint(np.asarray([[float(Fraction(v)) for v in row] for row in x]) * k).astype(np.int64)
    if xu.shape != (d, d):
        raise ArgumentError(f"x must be a {d}x{d} matrix")
    ru = _r_units(model, r)
    if not np.array_equal(xu.sum(axis=1), -ru):
        raise ArgumentError("x must have row sums equal to -r")
    neg = [[Fraction(-int(v), k) for v in row] for row in xu]
    from .lattice import exact_det

    det = float(exact_det(neg))
    grid = np.atleast_2d(np.asarray(t_grid, dtype=float))
    if grid.shape[1] != d:
        grid = grid.reshape(-1, d)
    if np.any(grid <= 0):
        raise ArgumentError("grid times must be positive")
    H = float(horizon) if horizon is not None else float(grid.max() * (1 + width)) + 1.0
    smp = simulate_hitting(model, r, H, n_samples, seed, backend=backend)
    Xu = np.rint(smp.X * k).astype(np.int64)
    match = smp.all_hit & np.all(Xu == xu, axis=(1, 2))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    out = []
    for t in grid:
        lo, hi = t * (1 - width), t * (1 + width)
        vol = float(np.prod(hi - lo))
        inbox = match & np.all((smp.times >= lo) & (smp.times <= hi), axis=1)
        lhs = MCEstimate.from_values(inbox / vol, None, seed)
        tt = rng.uniform(lo, hi, size=(n_samples, d))
        Xt = sample_field_at(model, tt, rng)
        eq = np.all(Xt == xu, axis=(1, 2))
        rhs_vals = np.where(eq, (k ** d) * det / np.prod(tt, axis=1), 0.0)
        rhs = MCEstimate.from_values(rhs_vals, None, seed)
        se = math.hypot(lhs.stderr, rhs.stderr)
        out.append({"t": t.tolist(), "lhs": lhs, "rhs": rhs, "passed": abs(lhs.mean - rhs.mean) <= 4 * se})
    return out
