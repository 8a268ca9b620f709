"""Multitype branching populations as time changes of a lattice field.

``Z_t = r + (sum_j X^{ij}(L_j(t)))_i`` with loads ``L_j(t) = int_0^t Z_j``.  The
loads are advanced by explicit Euler steps.  A column's events are applied only
while its own row is positive: a row can only decrease through its own column, so
this is the exact dynamics between grid times, and the final load of column ``j``
overshoots the hitting time ``T_j`` by at most one step's increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ArgumentError, ResourceError
from .exponent import ExponentOracle, ModelSpec
from .inversion import phi_at_zero
from .montecarlo import MCEstimate, TAG_MAIN, VerificationRecord, _lattice, _r_units
from .paths import HittingResult, PathBundle


@dataclass(frozen=True)
class BranchingState:
    t: float
    Z: tuple
    L: tuple
    extinct: bool


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    Z: np.ndarray
    L: np.ndarray
    extinct: bool
    extinction_time: float
    extinction_load: Optional[np.ndarray]
    max_population: float
    h: float

    def states(self) -> Iterator[BranchingState]:
        for a in range(self.t.size):
            dead = self.extinct and self.t[a] >= self.extinction_time
            yield BranchingState(float(self.t[a]), tuple(self.Z[a]), tuple(self.L[a]), dead)

    def rows(self) -> list:
        d = self.Z.shape[1]
        header = ["t"] + [f"Z{i + 1}" for i in range(d)] + [f"L{i + 1}" for i in range(d)]
        return [header] + [[float(self.t[a]), *map(float, self.Z[a]), *map(float, self.L[a])]
                           for a in range(self.t.size)]


def solve_lamperti(paths: PathBundle, r, h: float, t_max: float, record_every: int = 1) -> Trajectory:
    """Euler solution of the load equation on a lattice path bundle."""
    if not paths.is_lattice:
        raise ArgumentError("the Lamperti solver needs lattice paths")
    if not (h > 0 and t_max > 0):
        raise ArgumentError("h and t_max must be positive")
    d, k = paths.d, paths.k
    from .paths import _check_r

    r_units = np.array([int(round(float(x) * k)) for x in _check_r(paths, r)], dtype=np.int64)
    X = np.zeros((d, d), dtype=np.int64)
    ptr = [0] * d
    L = np.zeros(d)
    Z = r_units.copy()
    ts, Zs, Ls = [0.0], [Z / k], [L.copy()]
    peak = float(Z.max(initial=0)) / k
    if np.all(Z <= 0):
        return Trajectory(np.array(ts), np.array(Zs), np.array(Ls), True, 0.0, L.copy(), peak, h)
    n_steps = int(math.ceil(t_max / h - 1e-9))
    for s in range(1, n_steps + 1):
        L = L + np.where(Z > 0, h * Z / k, 0.0)
        if np.any(L > paths.horizon):
            raise ResourceError(f"loads {L.tolist()} ran past the path horizon {paths.horizon}; enlarge it")
        for j in range(d):
            times = paths.times[j]
            while ptr[j] < times.size and times[ptr[j]] <= L[j]:
                if r_units[j] + X[j].sum() <= 0:
                    break
                X[:, j] += paths.deltas[j][ptr[j]]
                ptr[j] += 1
        Z = np.maximum(r_units + X.sum(axis=1), 0)
        peak = max(peak, float(Z.max()) / k)
        dead = bool(np.all(Z <= 0))
        if dead or s % record_every == 0:
            ts.append(s * h)
            Zs.append(Z / k)
            Ls.append(L.copy())
        if dead:
            return Trajectory(np.array(ts), np.array(Zs), np.array(Ls), True, s * h, L.copy(), peak, h)
    return Trajectory(np.array(ts), np.array(Zs), np.array(Ls), False, math.inf, None, peak, h)


def check_load_identity(trajectory: Trajectory, hitting: HittingResult, tol: Optional[float] = None) -> bool:
    """``|L_j(extinction) - T_j| <= tol`` for every j; default ``tol = h * max population``."""
    if not trajectory.extinct:
        raise ArgumentError("the trajectory did not reach extinction")
    if tol is None:
        tol = trajectory.h * trajectory.max_population + 1e-12
    T = np.array([s if math.isfinite(s) else math.inf for s in hitting.s])
    return bool(np.all(np.abs(trajectory.extinction_load - T) <= tol))


def load_errors(model: ModelSpec, r, h: float, t_max: float, n: int, seed: int, horizon: float,
                backend=None) -> np.ndarray:
    """``max_j |L_j(ext) - T_j|`` per replicate on shared driver streams (NaN where either side is missing)."""
    _lattice(model)
    ru = _r_units(model, r)
    key = _kernels.seed_key(seed, TAG_MAIN)
    tables = model.lattice_tables()
    _, times, _, hit = _kernels.first_passage(key, 0, np.broadcast_to(ru, (n, model.d)), horizon, tables, backend)
    ext, _, L_ext = _kernels.lamperti_extinction(key, 0, n, ru, model.k, h, t_max, horizon, tables, backend)
    ok = ext & hit.all(axis=1)
    err = np.full(n, np.nan)
    err[ok] = np.abs(L_ext[ok] - times[ok]).max(axis=1)
    return err


def extinction_probability(model: ModelSpec, r, t_max: float, n: int, seed: int, h: float = 0.01,
                           load_cap: float = 50.0, backend=None) -> VerificationRecord:
    """Extinction frequency by ``t_max`` against ``exp(-<phi0, r>)``.

    A replicate whose load passes ``load_cap`` is counted as surviving.  The
    record carries the ladder ``t_max/4, t_max/2, t_max`` from the same run.
    """
    _lattice(model)
    ru = _r_units(model, r)
    rv = ru / model.k
    phi0 = phi_at_zero(ExponentOracle(model=model))
    predicted = math.exp(-float(phi0 @ rv))
    key = _kernels.seed_key(seed, TAG_MAIN)
    ext, t_ext, _ = _kernels.lamperti_extinction(key, 0, int(n), ru, model.k, h, t_max, load_cap,
                                                 model.lattice_tables(), backend)
    ladder = []
    for frac in (0.25, 0.5, 1.0):
        by = ext & (t_ext <= frac * t_max + 1e-12)
        ladder.append((frac * t_max, MCEstimate.from_values(by.astype(float), ~by, seed)))
    mc = ladder[-1][1]
    bias = 2.0 * max(0.0, mc.mean - ladder[0][1].mean)
    passed = (mc.mean - predicted <= 4 * mc.stderr) and (predicted - mc.mean <= 4 * mc.stderr + bias)
    extra = {"ladder": [{"t_max": t, "mean": e.mean, "stderr": e.stderr} for t, e in ladder],
             "phi0": phi0.tolist()}
    return VerificationRecord("extinction", model.content_hash(),
                              {"r": rv.tolist(), "t_max": t_max, "n": int(n), "seed": seed, "h": h,
                               "load_cap": load_cap}, mc, predicted, bias, passed, extra)
