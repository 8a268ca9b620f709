"""Inverting the Laplace exponent and classifying the drift."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from .errors import ArgumentError, NumericError
from .exponent import ExponentOracle, ModelSpec, _as_shift, esscher_exponent, mean_matrix

NEWTON_MAX_ITER = 500
NEWTON_RTOL = 1e-10
OSCILLATION_BAND = 1e-9
ZERO_LADDER = tuple(10.0 ** -e for e in range(0, 9))
BOUNDARY_LADDER = (1e-6, 1e-7, 1e-8)


@dataclass(frozen=True)
class InversionResult:
    value: np.ndarray
    residual: np.ndarray
    iterations: int
    converged: bool


@dataclass(frozen=True)
class DriftClass:
    rho: float
    classification: str
    irreducible: bool
    phi0: Optional[np.ndarray]
    consistent: Optional[bool] = None
    hypothesis_witness: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "class": self.classification,
            "irreducible": self.irreducible,
            "phi0": None if self.phi0 is None else [float(v) for v in self.phi0],
            "consistent": self.consistent,
            "witness": None if self.hypothesis_witness is None else [float(v) for v in self.hypothesis_witness],
        }


def _oracle(obj) -> ExponentOracle:
    if isinstance(obj, ExponentOracle):
        return obj
    if isinstance(obj, ModelSpec):
        return ExponentOracle(model=obj)
    raise ArgumentError(f"expected an ExponentOracle or ModelSpec, got {type(obj).__name__}")


# ----------------------------------------------------------------------------
# hypothesis: D = {lam >= 0 : phi_j(lam) > 0 for all j} is nonempty
# ----------------------------------------------------------------------------
def _raise_coordinate(oracle, lam, j, level, cap=1e12):
    """Smallest y >= lam[j] on the increasing branch with phi_j(.., y, ..) = level, or None."""
    def f(y):
        x = lam.copy()
        x[j] = y
        return oracle.phi(x)[j] - level

    lo = lam[j]
    if f(lo) >= 0:
        return lo
    hi = max(1.0, 2.0 * lo)
    while f(hi) < 0:
        lo = hi
        hi *= 2.0
        if hi > cap:
            return None
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-12)


def check_hypothesis_H(oracle, sweeps: int = 200) -> tuple:
    """Search for a point of D.  Returns ``(True, witness)`` or ``(False, None)``.

    A negative answer means the search budget ran out, not that D is empty.
    """
    oracle = _oracle(oracle)
    cached = oracle._cache.get("witness")
    if cached is not None:
        return True, cached.copy()
    d = oracle.d
    for c in np.logspace(-2, 3, 11):
        lam = np.full(d, c)
        if np.all(oracle.phi(lam) > 0):
            oracle._cache["witness"] = lam
            return True, lam.copy()
    # one-coordinate increases only lower the other exponents, so Gauss-Seidel
    # on phi_j = eps is monotone
    for eps in (1.0, 1e-2, 1e-4):
        lam = np.zeros(d)
        for _ in range(sweeps):
            failed = False
            for j in range(d):
                y = _raise_coordinate(oracle, lam, j, 2.0 * eps)
                if y is None:
                    failed = True
                    break
                lam[j] = y
            if failed:
                break
            if np.all(oracle.phi(lam) > 0):
                oracle._cache["witness"] = lam.copy()
                return True, lam.copy()
    return False, None


def _require_witness(oracle) -> np.ndarray:
    holds, witness = check_hypothesis_H(oracle)
    if not holds:
        raise ArgumentError("no point with all exponents positive was found; the exponent cannot be inverted")
    return witness


# ----------------------------------------------------------------------------
# Newton inversion
# ----------------------------------------------------------------------------
def _newton(oracle, target, x0, max_iter=NEWTON_MAX_ITER, step_tol=None):
    target = np.asarray(target, dtype=float)
    scale = 1.0 + np.abs(target)
    x = np.array(x0, dtype=float)
    F = oracle.phi(x) - target
    best_x, best_norm = x.copy(), float(np.max(np.abs(F) / scale))
    for it in range(1, max_iter + 1):
        norm = float(np.max(np.abs(F) / scale))
        if step_tol is None and norm <= NEWTON_RTOL:
            return x, F, it - 1, True
        DF = -oracle.jac(x).T
        try:
            step = np.linalg.solve(DF, F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(DF, F, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        cur = float(np.linalg.norm(F / scale))
        while True:
            trial = np.maximum(x - t * step, 0.0)
            Ft = oracle.phi(trial) - target
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft / scale) < cur:
                break
            t *= 0.5
            if t < 1e-12:
                trial, Ft = None, None
                break
        if trial is None:
            break
        moved = float(np.max(np.abs(trial - x)))
        x, F = trial, Ft
        norm = float(np.max(np.abs(F) / scale))
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm
        if step_tol is not None and moved <= step_tol:
            return x, F, it, True
    norm = float(np.max(np.abs(F) / scale))
    if step_tol is None and norm <= NEWTON_RTOL:
        return x, F, max_iter, True
    if step_tol is not None:
        return x, F, max_iter, False
    raise NumericError(f"Newton inversion did not converge (scaled residual {best_norm:.3e})", best=best_x)


def _start_point(oracle, witness, target) -> np.ndarray:
    x = witness.copy()
    for _ in range(200):
        if np.all(oracle.phi(x) >= target):
            return x
        x = 2.0 * x
    raise NumericError("could not bracket the target from the witness", best=x)


def invert_exponent(oracle, target: Sequence[float], start=None) -> InversionResult:
    """Solve ``phi(x) = target`` for ``x`` in the closure of D."""
    oracle = _oracle(oracle)
    tgt = np.asarray(target, dtype=float).reshape(-1)
    if tgt.shape != (oracle.d,):
        raise ArgumentError(f"target must have length {oracle.d}")
    if np.any(tgt <= 0) or not np.all(np.isfinite(tgt)):
        raise ArgumentError("target must be finite and strictly positive")
    witness = _require_witness(oracle)
    x0 = _start_point(oracle, witness, tgt) if start is None else np.asarray(start, dtype=float)
    x, F, it, ok = _newton(oracle, tgt, x0)
    return InversionResult(x, F, it, ok)


def _aitken(seq: np.ndarray) -> np.ndarray:
    """Delta-squared extrapolation of the last three rows, coordinatewise."""
    x0, x1, x2 = seq[-3], seq[-2], seq[-1]
    denom = x2 - 2.0 * x1 + x0
    out = x2.copy()
    ok = np.abs(denom) > 1e-300
    out[ok] = x2[ok] - (x2[ok] - x1[ok]) ** 2 / denom[ok]
    return out


def phi_at_zero(oracle) -> np.ndarray:
    """Largest nonnegative root of ``phi(lam) = 0``; zero when that is the only one."""
    oracle = _oracle(oracle)
    cached = oracle._cache.get("phi0")
    if cached is not None:
        return cached.copy()
    d = oracle.d
    vals = []
    x = None
    for eps in ZERO_LADDER:
        x = invert_exponent(oracle, np.full(d, eps), start=x).value
        vals.append(x.copy())
    vals = np.array(vals)
    polished, _, _, _ = _newton(oracle, np.zeros(d), vals[-1], step_tol=1e-13)
    # Aitken is exact for the linear and the square-root approach; the Taylor
    # step in eps covers near-critical ladders caught between the two
    eps = ZERO_LADDER[-1]
    try:
        slope = np.linalg.solve(-oracle.jac(vals[-1]).T, np.ones(d))
        taylor = np.maximum(vals[-1] - eps * slope, 0.0)
    except np.linalg.LinAlgError:
        taylor = vals[-1]
    candidates = [np.maximum(_aitken(vals), 0.0), taylor]
    extrap = min(candidates, key=lambda c: float(np.max(np.abs(c - polished))))
    if np.max(np.abs(extrap - polished)) > 1e-6:
        raise NumericError(
            f"root at zero: extrapolation {extrap.tolist()} disagrees with Newton {polished.tolist()}",
            best=extrap)
    out = polished if np.max(polished) > 1e-8 else np.zeros(d)
    oracle._cache["phi0"] = out
    return out.copy()


# ----------------------------------------------------------------------------
# bivariate exponent
# ----------------------------------------------------------------------------
def big_phi(oracle, lam: Sequence[float], mu) -> np.ndarray:
    """Solve ``phi_j(mu[:, j] + x) = lam_j`` for all j."""
    oracle = _oracle(oracle)
    d = oracle.d
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (d,) or np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ArgumentError(f"lambda must be {d} finite nonnegative numbers")
    shift = _as_shift(mu, d)
    base = np.array([oracle.phi(shift[:, j])[j] for j in range(d)])
    tau = lam - base
    tol = 1e-12 * (1.0 + np.abs(lam))
    if np.any(tau < -tol):
        bad = int(np.argmax(base - lam))
        raise ArgumentError(
            f"lambda[{bad}] = {lam[bad]} is below phi_{bad}(mu[:, {bad}]) = {base[bad]}")
    ess = esscher_exponent(oracle, shift) if np.any(shift) else oracle
    boundary = tau <= tol
    if not boundary.any():
        value = invert_exponent(ess, tau).value
    else:
        tau = np.where(boundary, 0.0, tau)
        seq = []
        x = None
        for eps in BOUNDARY_LADDER:
            x = invert_exponent(ess, np.where(boundary, eps, tau), start=x).value
            seq.append(x.copy())
        extrap = np.maximum(_aitken(np.array(seq)), 0.0)
        value, _, _, _ = _newton(ess, tau, seq[-1], step_tol=1e-13)
        if np.max(np.abs(extrap - value)) > 1e-6:
            value = extrap
        if np.max(value) <= 1e-8:
            value = np.zeros(d)
    check = np.array([oracle.phi(shift[:, j] + value)[j] for j in range(d)])
    err = np.abs(check - lam) / (1.0 + np.abs(lam))
    if np.max(err) > 1e-8:
        raise NumericError(f"bivariate exponent residual {np.max(err):.3e} exceeds 1e-8", best=value)
    return value


# ----------------------------------------------------------------------------
# drift classification
# ----------------------------------------------------------------------------
def _block_root(B: np.ndarray, max_iter: int = 100_000, width: float = 1e-10) -> float:
    n = B.shape[0]
    if n == 1:
        return float(B[0, 0])
    c = 1.0 + float(np.max(np.abs(np.diag(B))))
    P = B + c * np.eye(n)
    x = np.ones(n)
    for _ in range(max_iter):
        y = P @ x
        ratios = y / x
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= width:
            return 0.5 * (lo + hi) - c
        x = y / np.linalg.norm(y)
    raise NumericError("Perron root bracket failed to contract", best=0.5 * (lo + hi) - c)


def perron_root(J) -> tuple:
    """Perron root of a Metzler matrix and whether it is irreducible."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ArgumentError("Perron root needs a square matrix")
    if not np.all(np.isfinite(J)):
        raise ArgumentError("matrix entries must be finite")
    off = J.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise ArgumentError("off-diagonal entries must be nonnegative")
    n_comp, labels = connected_components(off != 0, directed=True, connection="strong")
    roots = []
    for c in range(n_comp):
        idx = np.nonzero(labels == c)[0]
        roots.append(_block_root(J[np.ix_(idx, idx)]))
    return max(roots), n_comp == 1


def _classify(rho: float) -> str:
    if abs(rho) <= OSCILLATION_BAND:
        return "oscillates"
    return "drifts-to-minus-infinity" if rho < 0 else "drifts-to-plus-infinity"


def classify_drift(oracle) -> DriftClass:
    oracle = _oracle(oracle)
    J = mean_matrix(oracle)
    rho, irreducible = perron_root(J)
    holds, witness = check_hypothesis_H(oracle)
    phi0 = phi_at_zero(oracle) if holds else None
    consistent = None
    if irreducible and phi0 is not None:
        consistent = bool(np.all(phi0 == 0)) == (rho <= OSCILLATION_BAND)
    return DriftClass(rho, _classify(rho), irreducible, phi0, consistent, witness)


# ----------------------------------------------------------------------------
# two-dimensional Brownian field with coupled drifts
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class Example2D:
    phi: Optional[np.ndarray]
    in_D: bool
    rho: float
    phi0: np.ndarray


def example2d_model(a1, a2, a12, a21, q1, q2) -> ModelSpec:
    """Brownian field whose column j has drift (a_j, a_ij) and variance q_j."""
    return ModelSpec(drift=[[a1, a12], [a21, a2]], q=[q1, q2])


def _fp_map(a, c, q, lam, x):
    new = np.empty(2)
    for j in (0, 1):
        disc = a[j] ** 2 + 2.0 * q[j] * lam[j] + 2.0 * c[j] * q[j] * x[1 - j]
        new[j] = (a[j] + math.sqrt(max(disc, 0.0))) / q[j]
    return new


def _fixed_point(a, c, q, lam, x0, tol=1e-13, cap=10_000):
    x = np.array(x0, dtype=float)
    for _ in range(cap):
        new = _fp_map(a, c, q, lam, x)
        if np.max(np.abs(new - x)) <= tol * (1.0 + np.max(np.abs(new))):
            return new
        x = new
    raise NumericError("2D fixed point did not converge", best=x)


def example2d_closed_form(a1, a2, a12, a21, q1, q2, lam=None) -> Example2D:
    """Closed-form quantities for the two-dimensional Brownian field.

    Column 1 has drift ``(a1, a21)`` and column 2 has drift ``(a12, a2)``, so the
    mean matrix is ``[[a1, a12], [a21, a2]]``.
    """
    if not (q1 > 0 and q2 > 0):
        raise ArgumentError("both variances must be positive")
    if a12 < 0 or a21 < 0:
        raise ArgumentError("off-diagonal drifts must be nonnegative")
    a = (float(a1), float(a2))
    c = (float(a21), float(a12))  # coupling seen by coordinate j from coordinate i
    q = (float(q1), float(q2))
    rho = 0.5 * (a1 + a2 + math.sqrt((a1 - a2) ** 2 + 4.0 * a12 * a21))
    if a1 < 0 and a2 < 0 and a1 * a2 >= a12 * a21 - OSCILLATION_BAND:
        phi0 = np.zeros(2)
    else:
        start = np.full(2, 1.0)
        zero = np.zeros(2)
        while True:
            if np.all(_fp_map(a, c, q, zero, start) <= start):
                break
            start *= 2.0
        phi0 = _fixed_point(a, c, q, zero, start)
    phi = None
    in_D = False
    if lam is not None:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (2,) or np.any(lam < 0):
            raise ArgumentError("lambda must be a nonnegative pair")
        if np.any(lam > 0):
            phi = _fixed_point(a, c, q, lam, np.zeros(2))
        else:
            phi = phi0.copy()
        b1 = max((a1 + math.sqrt(a1 * a1 + 2.0 * a21 * q1 * lam[1])) / q1, 0.0)
        b2 = max((a2 + math.sqrt(a2 * a2 + 2.0 * a12 * q2 * lam[0])) / q2, 0.0)
        in_D = bool(lam[0] > b1 and lam[1] > b2)
    return Example2D(phi, in_D, rho, phi0)
