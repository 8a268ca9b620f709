"""Realized paths of the matrix field and the smallest-solution algorithm.

Two families are supported:

* continuous: each column has a drift vector plus nonnegative jumps; the hitting
  time of coordinate ``i`` reads the diagonal left limit ``x^{ii}(t-)``;
* lattice: piecewise-constant paths on ``Z/k`` whose diagonal steps are >= -1/k.
  Here the diagonal reaches a level by a -1/k step, so the solver reads right
  values ``x^{ij}(t)``, which is the lattice notion of first hitting.

Beyond the horizon every path is frozen at its value at ``H``; coordinates the
iteration cannot resolve on ``[0, H]`` are ``censored`` (or ``infinite`` when the
path is known on the whole half-line).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ._numbers import as_number, to_jsonable
from .errors import ArgumentError, ResourceError

HIT, CENSORED, INFINITE = "hit", "censored", "infinite"
MAX_SWEEPS = 10**6
_ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Per-column drift plus event lists on ``[0, horizon]``.

    ``drifts[:, j]`` is the drift vector of column ``j``.  ``times[j]`` is strictly
    increasing in ``(0, horizon]``.  ``deltas[j]`` has one row per event: floats for
    the continuous family, integers in units of ``1/k`` for the lattice family.
    """

    horizon: float
    drifts: np.ndarray
    times: tuple
    deltas: tuple
    k: Optional[int] = None

    def __post_init__(self):
        d = len(self.times)
        H = float(self.horizon)
        if not H > 0:
            raise ArgumentError("horizon must be positive")
        drifts = np.asarray(self.drifts, dtype=float).reshape(d, d)
        times, deltas = [], []
        for j in range(d):
            t = np.asarray(self.times[j], dtype=float).reshape(-1)
            dl = np.asarray(self.deltas[j]).reshape(t.size, d)
            if t.size and (t[0] <= 0 or t[-1] > H or np.any(np.diff(t) <= 0)):
                raise ArgumentError(f"column {j}: event times must increase strictly within (0, H]")
            if self.k is None:
                dl = dl.astype(float)
                if np.any(dl < 0):
                    raise ArgumentError(f"column {j}: continuous paths only jump upward")
                if any(drifts[i, j] < 0 for i in range(d) if i != j):
                    raise ArgumentError(f"column {j}: off-diagonal drift must be >= 0")
            else:
                dl = dl.astype(np.int64)
                if np.any(drifts != 0):
                    raise ArgumentError("lattice paths carry no drift")
                for i in range(d):
                    lo = -1 if i == j else 0
                    if dl.size and dl[:, i].min() < lo:
                        raise ArgumentError(f"column {j}: step below the skip-free bound on row {i}")
            t.setflags(write=False)
            dl.setflags(write=False)
            times.append(t)
            deltas.append(dl)
        drifts.setflags(write=False)
        object.__setattr__(self, "horizon", H)
        object.__setattr__(self, "drifts", drifts)
        object.__setattr__(self, "times", tuple(times))
        object.__setattr__(self, "deltas", tuple(deltas))
        cums = []
        for j in range(d):
            c = np.zeros((times[j].size + 1, d), dtype=deltas[j].dtype)
            if times[j].size:
                np.cumsum(deltas[j], axis=0, out=c[1:])
            c.setflags(write=False)
            cums.append(c)
        object.__setattr__(self, "_cum", tuple(cums))

    # ---- constructors ------------------------------------------------------
    @classmethod
    def lattice(cls, k: int, horizon: float, events: Sequence[Sequence]) -> "PathBundle":
        """Build from per-column lists of ``(time, delta)`` with deltas on the ``Z/k`` grid."""
        d = len(events)
        times, deltas = [], []
        for col in events:
            ts, ds = [], []
            for t, delta in col:
                ts.append(float(t))
                units = []
                for x in delta:
                    fx = Fraction(as_number(x)) if not isinstance(x, float) else Fraction(x).limit_denominator(10**9)
                    u = fx * k
                    if u.denominator != 1:
                        raise ArgumentError(f"step {x} is off the 1/{k} grid")
                    units.append(int(u))
                ds.append(units)
            times.append(ts)
            deltas.append(np.array(ds, dtype=np.int64).reshape(len(ts), d))
        return cls(horizon, np.zeros((d, d)), tuple(times), tuple(deltas), k)

    @classmethod
    def continuous(cls, horizon: float, drifts, events: Sequence[Sequence]) -> "PathBundle":
        """``drifts[i][j]`` is the drift of entry (i, j); events per column as ``(time, delta)``."""
        d = len(events)
        times = [[float(t) for t, _ in col] for col in events]
        deltas = [np.array([[float(x) for x in dl] for _, dl in col], dtype=float).reshape(len(col), d)
                  for col in events]
        return cls(horizon, np.asarray(drifts, dtype=float), tuple(times), tuple(deltas), None)

    # ---- evaluation --------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.times)

    @property
    def is_lattice(self) -> bool:
        return self.k is not None

    def value(self, i: int, j: int, t: float, left: bool = False):
        """``x^{ij}(t)`` (or ``x^{ij}(t-)``); lattice values are exact Fractions."""
        if t == math.inf or t > self.horizon:
            t_eff, left = self.horizon, False
        else:
            t_eff = t
        ts = self.times[j]
        n = bisect.bisect_left(ts, t_eff) if left else bisect.bisect_right(ts, t_eff)
        if self.is_lattice:
            return Fraction(int(self._cum[j][n, i]), self.k)
        b = self.drifts[i, j]
        if t == math.inf and self.horizon == math.inf:
            return math.inf if b > 0 else float(self._cum[j][n, i])
        return b * t_eff + float(self._cum[j][n, i])

    # ---- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        cols = []
        for j in range(self.d):
            if self.is_lattice:
                ev = [{"time": float(t), "delta": [to_jsonable(Fraction(int(u), self.k)) for u in row]}
                      for t, row in zip(self.times[j], self.deltas[j])]
            else:
                ev = [{"time": float(t), "delta": [float(u) for u in row]}
                      for t, row in zip(self.times[j], self.deltas[j])]
            cols.append({"drift": [float(x) for x in self.drifts[:, j]], "events": ev})
        return {"d": self.d, "horizon": self.horizon, "k": self.k, "columns": cols}

    @classmethod
    def from_dict(cls, data: dict) -> "PathBundle":
        cols = data["columns"]
        events = [[(e["time"], e["delta"]) for e in c["events"]] for c in cols]
        if data.get("k") is not None:
            return cls.lattice(int(data["k"]), float(data["horizon"]), events)
        drifts = np.array([c["drift"] for c in cols], dtype=float).T
        return cls.continuous(float(data["horizon"]), drifts, events)


@dataclass(frozen=True)
class HittingResult:
    """Smallest solution ``s`` of the system (r, x).

    ``matrix_at[i][j]`` is ``x^{ij}`` at ``s_j`` (right value for lattice paths,
    left limit for continuous ones); columns of unresolved coordinates carry the
    frozen value at the horizon.
    """

    s: tuple
    status: tuple
    matrix_at: tuple
    iterations: int
    history: tuple = field(default=(), repr=False)

    @property
    def finite_set(self) -> frozenset:
        return frozenset(i for i, st in enumerate(self.status) if st == HIT)

    @property
    def all_hit(self) -> bool:
        return all(st == HIT for st in self.status)


def _check_r(paths: PathBundle, r) -> list:
    vals = [as_number(x) for x in (r if isinstance(r, (list, tuple, np.ndarray)) else [r])]
    if len(vals) != paths.d:
        raise ArgumentError(f"r must have length {paths.d}")
    if any(x < 0 for x in vals):
        raise ArgumentError("r must be nonnegative")
    return vals


def smallest_solution(paths: PathBundle, r, trace: bool = False) -> HittingResult:
    """Smallest solution of ``r_i + sum_j x^{ij}(s_j) = 0`` by monotone iteration."""
    r = _check_r(paths, r)
    if paths.is_lattice:
        return _solve_lattice(paths, r, trace)
    return _solve_continuous(paths, [float(x) for x in r], trace)


# ---- lattice ---------------------------------------------------------------
def _first_hit_table(diag: np.ndarray) -> np.ndarray:
    """``table[L]`` = first event index where the diagonal cumulative value equals ``-L``."""
    table = [0]
    low = 0
    for e in range(1, diag.size):
        if diag[e] < low:
            low = int(diag[e])
            table.append(e)
    return np.array(table, dtype=np.int64)


def _solve_lattice(paths: PathBundle, r: list, trace: bool) -> HittingResult:
    d, k = paths.d, paths.k
    r_units = []
    for x in r:
        u = Fraction(x) * k if not isinstance(x, float) else Fraction(x).limit_denominator(10**9) * k
        if u.denominator != 1:
            raise ArgumentError(f"level {x} is off the 1/{k} grid")
        r_units.append(int(u))
    cum = paths._cum
    tables = [_first_hit_table(cum[j][:, j]) for j in range(d)]
    last = [cum[j].shape[0] - 1 for j in range(d)]
    idx = [None] * d
    resolved = [True] * d
    v = list(r_units)
    history = []
    sweeps = 0
    while True:
        sweeps += 1
        if sweeps > MAX_SWEEPS:
            raise ResourceError("smallest-solution sweep cap exceeded")
        new_idx = []
        new_res = []
        for i in range(d):
            if resolved[i] and v[i] < tables[i].size:
                new_idx.append(int(tables[i][v[i]]))
                new_res.append(True)
            else:
                new_idx.append(last[i])
                new_res.append(False)
        if trace:
            history.append(tuple(_time_of(paths, j, new_idx[j]) if new_res[j] else math.inf for j in range(d)))
        if new_idx == idx and new_res == resolved:
            break
        idx, resolved = new_idx, new_res
        v = [r_units[i] + sum(int(cum[j][idx[j], i]) for j in range(d) if j != i) for i in range(d)]
    unresolved = INFINITE if paths.horizon == math.inf else CENSORED
    s = tuple(_time_of(paths, j, idx[j]) if resolved[j] else math.inf for j in range(d))
    status = tuple(HIT if resolved[j] else unresolved for j in range(d))
    matrix = tuple(tuple(Fraction(int(cum[j][idx[j], i]), k) for j in range(d)) for i in range(d))
    return HittingResult(s, status, matrix, sweeps, tuple(history))


def _time_of(paths: PathBundle, j: int, e: int) -> float:
    return 0.0 if e == 0 else float(paths.times[j][e - 1])


# ---- continuous ------------------------------------------------------------
class _Column:
    """Precomputed crossing data for one continuous column."""

    def __init__(self, paths: PathBundle, j: int):
        self.j = j
        self.t = paths.times[j]
        self.cum = paths._cum[j]
        self.b = paths.drifts[:, j]
        self.H = paths.horizon
        beta = self.b[j]
        self.beta = beta
        m = self.t.size
        if beta < 0:
            ends = np.empty(m + 1)
            seg_end = np.append(self.t, self.H)
            ends[:] = beta * seg_end + self.cum[:, j]
            self.run_min = np.minimum.accumulate(ends)
        else:
            self.run_min = None

    def crossing(self, level: float):
        """First ``t`` with ``x^{jj}(t-) = -level``; returns (time, segment) or None."""
        if level < 0:
            level = 0.0
        if level == 0.0:
            return 0.0, 0
        if self.run_min is None or level == math.inf:
            return None
        target = -level
        # first segment whose running minimum reaches the target
        n = int(np.searchsorted(-self.run_min, -target, side="left"))
        if n >= self.run_min.size:
            return None
        t = (level + self.cum[n, self.j]) / (-self.beta)
        lo = 0.0 if n == 0 else self.t[n - 1]
        return max(t, lo), n

    def left_value(self, i: int, s: float) -> float:
        if s == math.inf:
            if self.H == math.inf:
                return math.inf if self.b[i] > 0 else float(self.cum[-1, i])
            return self.b[i] * self.H + float(self.cum[-1, i])
        p = int(np.searchsorted(self.t, s, side="left"))
        return self.b[i] * s + float(self.cum[p, i])

    def events_before(self, s: float) -> int:
        return int(np.searchsorted(self.t, s, side="left"))


def _solve_continuous(paths: PathBundle, r: list, trace: bool) -> HittingResult:
    d = paths.d
    cols = [_Column(paths, j) for j in range(d)]
    history = []
    sweeps = 0

    def step(cur):
        out, segs = [], []
        for i in range(d):
            if cur is None:
                v = r[i]
            else:
                v = r[i] + sum(cols[j].left_value(i, cur[j]) for j in range(d) if j != i)
            res = cols[i].crossing(v)
            if res is None or res[0] > paths.horizon:
                out.append(math.inf)
                segs.append(None)
            else:
                out.append(res[0])
                segs.append(res[1])
        return out, segs

    cur = None
    while True:
        sweeps += 1
        if sweeps > MAX_SWEEPS:
            raise ResourceError("smallest-solution sweep cap exceeded")
        raw, segs = step(cur)
        new = raw if cur is None else [max(a, b) for a, b in zip(raw, cur)]
        if trace:
            history.append(tuple(new))
        if cur is not None and all(
                (a == b) or (a != math.inf and b != math.inf and abs(a - b) <= 1e-13 * (1 + abs(a)))
                for a, b in zip(new, cur)):
            cur = new
            break
        cur = new
        if new == raw:
            jumped = _accelerate(cols, r, cur, segs)
            if jumped is not None:
                cur = jumped
    unresolved = INFINITE if paths.horizon == math.inf else CENSORED
    status = tuple(HIT if x != math.inf else unresolved for x in cur)
    matrix = tuple(tuple(cols[j].left_value(i, cur[j]) for j in range(d)) for i in range(d))
    return HittingResult(tuple(float(x) for x in cur), status, matrix, sweeps, tuple(history))


def _accelerate(cols, r, cur, segs):
    """Jump to the fixed point of the affine model valid on the current pieces.

    Past the current pieces the true map dominates its affine extension (jumps
    only push upward), so this fixed point never overshoots the smallest solution.
    """
    idx = [i for i, x in enumerate(cur) if x != math.inf]
    if not idx:
        return None
    m = len(idx)
    A = np.zeros((m, m))
    c = np.zeros(m)
    for a, i in enumerate(idx):
        beta = -cols[i].beta
        if not beta > 0:
            return None
        rhs = r[i] + float(cols[i].cum[segs[i], i])
        for j in range(len(cur)):
            if j == i:
                continue
            col = cols[j]
            if cur[j] == math.inf:
                val = col.left_value(i, math.inf)
                if val == math.inf:
                    return None
                rhs += val
            else:
                rhs += float(col.cum[col.events_before(cur[j]), i])
        for b_, j in enumerate(idx):
            if j != i:
                A[a, b_] = cols[j].b[i] / beta
        c[a] = rhs / beta
    M = np.eye(m) - A
    try:
        probe = np.linalg.solve(M, np.ones(m))
        sol = np.linalg.solve(M, c)
    except np.linalg.LinAlgError:
        return None
    if not np.all(probe > 0) or not np.all(np.isfinite(sol)):
        return None
    out = list(cur)
    for a, i in enumerate(idx):
        if sol[a] < cur[i] - 1e-12 * (1 + abs(cur[i])):
            return None
    for a, i in enumerate(idx):
        out[i] = max(cur[i], float(sol[a]))
    return out


# ---- dominance and infimum checks ---------------------------------------
def _row_sum(paths: PathBundle, i: int, u: Sequence[float]):
    left = not paths.is_lattice
    return sum(paths.value(i, j, u[j], left=left) for j in range(paths.d))


def check_dominance(paths: PathBundle, r, u: Sequence[float], s: HittingResult) -> bool:
    """True iff ``sum_j x^{ij}(u_j) <= -r_i`` on the finite coordinates of ``u`` implies ``u >= s``."""
    r = _check_r(paths, r)
    u = [math.inf if x is None else float(x) for x in u]
    premise = True
    for i in range(paths.d):
        if u[i] == math.inf:
            continue
        total = _row_sum(paths, i, u)
        bound = -r[i]
        if paths.is_lattice:
            ok = Fraction(total) <= Fraction(bound)
        else:
            ok = total <= bound + _ROW_TOL * (1 + abs(bound))
        if not ok:
            premise = False
            break
    if not premise:
        return True
    return all(u[i] >= s.s[i] for i in range(paths.d))


def check_infimum_property(paths: PathBundle, s: HittingResult) -> bool:
    """Each hit coordinate's diagonal reaches its running infimum over [0, s_i] first at s_i."""
    for i in s.finite_set:
        si = s.s[i]
        if paths.is_lattice:
            diag = paths._cum[i][:, i]
            e = bisect.bisect_right(paths.times[i], si)
            value = diag[e]
            if value != diag[: e + 1].min() or np.any(diag[:e] <= value):
                return False
        else:
            if si == 0:
                continue
            col = _Column(paths, i)
            value = col.left_value(i, si)
            p = col.events_before(si)
            # earlier left limits: the start and every pre-jump value before s_i
            earlier = [0.0] + [col.beta * col.t[n] + float(col.cum[n, i]) for n in range(p)]
            if any(e <= value for e in earlier):
                return False
    return True


def hit_identity_residuals(paths: PathBundle, r, s: HittingResult) -> list:
    """``r_i + sum_j x^{ij}(s_j)`` on hit rows (exact Fractions for lattice paths)."""
    r = _check_r(paths, r)
    out = []
    for i in sorted(s.finite_set):
        total = sum(s.matrix_at[i][j] for j in range(paths.d))
        out.append((Fraction(r[i]) if paths.is_lattice else r[i]) + total)
    return out
