"""Hot loops for lattice simulation, in numba and in vectorized numpy.

Randomness is counter based: the uniform used for event ``m`` of column ``j`` in
replicate ``rep`` is a hash of ``(key, rep, stream, m)``.  Stream ``2j`` drives
the exponential gaps of column ``j`` and stream ``2j+1`` its step choices, so a
replicate's driver path does not depend on evaluation order.  That makes the
per-replicate numba loops and the lockstep numpy loops consume identical numbers.

The backend defaults to numba when it imports; set ``SPALF_BACKEND=numpy`` to
force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as _nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None
    HAVE_NUMBA = False

BACKEND = os.environ.get("SPALF_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"SPALF_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
if BACKEND == "numba" and not HAVE_NUMBA:
    BACKEND = "numpy"


def njit(*args, **kwargs):
    if HAVE_NUMBA:
        return _nb.njit(*args, cache=True, **kwargs)
    return lambda func: func


def resolve_backend(backend=None) -> str:
    name = BACKEND if backend is None else str(backend).lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S40 = np.uint64(40)
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    # wrapping uint64 arithmetic is intended
    z = z + _GAMMA
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


_mix_nb = njit(inline="always")(_mix) if HAVE_NUMBA else _mix


def seed_key(seed: int, stream_tag: int = 0) -> np.uint64:
    """64-bit key for a (seed, tag) pair."""
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    with np.errstate(over="ignore"):
        a = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        b = np.array([int(stream_tag) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return _mix(_mix(a) ^ _mix(b + _GAMMA))[0]


def uniforms_np(key, rep, stream, idx) -> np.ndarray:
    """Vectorized counter uniforms in (0, 1)."""
    with np.errstate(over="ignore"):
        return _uniforms_np(key, rep, stream, idx)


def _uniforms_np(key, rep, stream, idx):
    rep = np.asarray(rep, dtype=np.uint64)
    stream = np.asarray(stream, dtype=np.uint64)
    idx = np.asarray(idx, dtype=np.uint64)
    h = _mix(np.uint64(key) ^ _mix(rep))
    z = _mix(h ^ _mix((stream << _S40) + idx))
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


@njit(inline="always")
def _uniform_nb(key, rep, stream, idx):
    h = _mix_nb(key ^ _mix_nb(np.uint64(rep)))
    z = _mix_nb(h ^ _mix_nb((np.uint64(stream) << _S40) + np.uint64(idx)))
    return (np.float64(z >> _S11) + 0.5) * _INV53


# ----------------------------------------------------------------------------
# first passage: greedy exploration
#
# Advancing any column whose row still lies above -r never overshoots the
# smallest solution, and the exploration stops exactly at it, so the result does
# not depend on which eligible column moves first.
# ----------------------------------------------------------------------------
@njit(nogil=True)
def _first_passage_nb(key, rep0, r_units, H, rates, cum, steps, nsup):
    n, d = r_units.shape
    counts = np.zeros((n, d), dtype=np.int64)
    times = np.zeros((n, d))
    X = np.zeros((n, d, d), dtype=np.int64)
    hit = np.zeros((n, d), dtype=np.bool_)
    frozen = np.zeros(d, dtype=np.bool_)
    for a in range(n):
        rep = rep0 + a
        for j in range(d):
            frozen[j] = rates[j] <= 0.0
        while True:
            moved = False
            for j in range(d):
                while not frozen[j]:
                    row = r_units[a, j]
                    for l in range(d):
                        row += X[a, j, l]
                    if row <= 0:
                        break
                    c = counts[a, j]
                    gap = -np.log(_uniform_nb(key, rep, 2 * j, c)) / rates[j]
                    t_new = times[a, j] + gap
                    if t_new > H:
                        frozen[j] = True
                        break
                    u = _uniform_nb(key, rep, 2 * j + 1, c)
                    m = 0
                    while m < nsup[j] - 1 and u > cum[j, m]:
                        m += 1
                    for i in range(d):
                        X[a, i, j] += steps[j, m, i]
                    times[a, j] = t_new
                    counts[a, j] = c + 1
                    moved = True
            if not moved:
                break
        for j in range(d):
            row = r_units[a, j]
            for l in range(d):
                row += X[a, j, l]
            hit[a, j] = row == 0
    return counts, times, X, hit


def _first_passage_np(key, rep0, r_units, H, rates, cum, steps, nsup):
    n, d = r_units.shape
    counts = np.zeros((n, d), dtype=np.int64)
    times = np.zeros((n, d))
    X = np.zeros((n, d, d), dtype=np.int64)
    frozen = np.broadcast_to(rates <= 0.0, (n, d)).copy()
    width = cum.shape[1]
    # entries past a column's support never count toward the step index
    thresholds = np.where(np.arange(width)[None, :] < (nsup[:, None] - 1), cum, np.inf)
    reps = np.arange(n, dtype=np.int64) + rep0
    safe_rates = np.where(rates > 0, rates, 1.0)
    while True:
        rows = r_units + X.sum(axis=2)
        ai, aj = np.nonzero((rows > 0) & ~frozen)
        if ai.size == 0:
            break
        c = counts[ai, aj]
        gap = -np.log(uniforms_np(key, reps[ai], 2 * aj, c)) / safe_rates[aj]
        t_new = times[ai, aj] + gap
        over = t_new > H
        frozen[ai[over], aj[over]] = True
        ok = ~over
        ai, aj, c, t_new = ai[ok], aj[ok], c[ok], t_new[ok]
        u = uniforms_np(key, reps[ai], 2 * aj + 1, c)
        m = (u[:, None] > thresholds[aj]).sum(axis=1)
        X[ai, :, aj] += steps[aj, m, :]
        times[ai, aj] = t_new
        counts[ai, aj] = c + 1
    rows = r_units + X.sum(axis=2)
    return counts, times, X, rows == 0


def first_passage(key, rep0, r_units, H, tables, backend=None):
    """Simulate lattice first passage for replicates ``rep0 .. rep0 + n - 1``.

    Returns step counts, hitting times, the field at the hitting point in units of
    1/k (``X[a, i, j]``) and per-coordinate hit flags.  Unresolved coordinates are
    frozen at the horizon.
    """
    rates, cum, steps, nsup = tables
    r_units = np.ascontiguousarray(r_units, dtype=np.int64)
    args = (np.uint64(key), np.int64(rep0), r_units, float(H), np.asarray(rates, dtype=float),
            np.asarray(cum, dtype=float), np.asarray(steps, dtype=np.int64), np.asarray(nsup, dtype=np.int64))
    if resolve_backend(backend) == "numba":
        return _first_passage_nb(*args)
    return _first_passage_np(*args)


def replicate_events(key, rep, H, tables):
    """All events of one replicate's driver on [0, H]: per column (times, unit steps)."""
    rates, cum, steps, nsup = tables
    d = len(rates)
    out = []
    for j in range(d):
        ts, ss = [], []
        if rates[j] > 0:
            t = 0.0
            c = 0
            while True:
                t = t + float(-np.log(uniforms_np(key, rep, 2 * j, c)) / rates[j])
                if t > H:
                    break
                u = float(uniforms_np(key, rep, 2 * j + 1, c))
                m = 0
                while m < nsup[j] - 1 and u > cum[j, m]:
                    m += 1
                ts.append(t)
                ss.append(steps[j, m].copy())
                c += 1
        out.append((np.array(ts), np.array(ss, dtype=np.int64).reshape(len(ts), d)))
    return out


# ----------------------------------------------------------------------------
# Lamperti: explicit Euler on the loads L_j, population Z = r + row sums of X(L)
# ----------------------------------------------------------------------------
@njit(nogil=True)
def _lamperti_nb(key, rep0, n, r_units, k, h, t_max, load_cap, rates, cum, steps, nsup):
    d = r_units.size
    extinct = np.zeros(n, dtype=np.bool_)
    t_ext = np.full(n, np.inf)
    L_ext = np.zeros((n, d))
    L = np.zeros(d)
    nxt = np.zeros(d)
    cnt = np.zeros(d, dtype=np.int64)
    X = np.zeros((d, d), dtype=np.int64)
    Z = np.zeros(d, dtype=np.int64)
    n_steps = int(np.ceil(t_max / h - 1e-9))
    for a in range(n):
        rep = rep0 + a
        for j in range(d):
            L[j] = 0.0
            cnt[j] = 0
            for i in range(d):
                X[i, j] = 0
            if rates[j] > 0:
                nxt[j] = -np.log(_uniform_nb(key, rep, 2 * j, 0)) / rates[j]
            else:
                nxt[j] = np.inf
        dead = True
        for i in range(d):
            Z[i] = r_units[i]
            if Z[i] > 0:
                dead = False
        if dead:
            extinct[a] = True
            t_ext[a] = 0.0
            continue
        for s in range(n_steps):
            for j in range(d):
                if Z[j] > 0:
                    L[j] += h * Z[j] / k
            for j in range(d):
                while nxt[j] <= L[j]:
                    row = r_units[j]
                    for l in range(d):
                        row += X[j, l]
                    if row <= 0:
                        break
                    c = cnt[j]
                    u = _uniform_nb(key, rep, 2 * j + 1, c)
                    m = 0
                    while m < nsup[j] - 1 and u > cum[j, m]:
                        m += 1
                    for i in range(d):
                        X[i, j] += steps[j, m, i]
                    cnt[j] = c + 1
                    nxt[j] += -np.log(_uniform_nb(key, rep, 2 * j, c + 1)) / rates[j]
            dead = True
            over = False
            for i in range(d):
                z = r_units[i]
                for j in range(d):
                    z += X[i, j]
                Z[i] = z if z > 0 else 0
                if Z[i] > 0:
                    dead = False
                if L[i] > load_cap:
                    over = True
            if dead:
                extinct[a] = True
                t_ext[a] = (s + 1) * h
                for j in range(d):
                    L_ext[a, j] = L[j]
                break
            if over:
                break
    return extinct, t_ext, L_ext


def _lamperti_np(key, rep0, n, r_units, k, h, t_max, load_cap, rates, cum, steps, nsup):
    d = r_units.size
    reps = np.arange(n, dtype=np.int64) + rep0
    width = cum.shape[1]
    thresholds = np.where(np.arange(width)[None, :] < (nsup[:, None] - 1), cum, np.inf)
    safe_rates = np.where(rates > 0, rates, 1.0)
    L = np.zeros((n, d))
    cnt = np.zeros((n, d), dtype=np.int64)
    X = np.zeros((n, d, d), dtype=np.int64)
    cols = np.broadcast_to(np.arange(d), (n, d))
    nxt = -np.log(uniforms_np(key, reps[:, None], 2 * cols, 0)) / safe_rates
    nxt[:, rates <= 0] = np.inf
    Z = np.broadcast_to(r_units, (n, d)).copy()
    extinct = np.zeros(n, dtype=bool)
    t_ext = np.full(n, np.inf)
    L_ext = np.zeros((n, d))
    start_dead = np.all(Z <= 0, axis=1)
    extinct[start_dead] = True
    t_ext[start_dead] = 0.0
    alive = ~start_dead
    n_steps = int(np.ceil(t_max / h - 1e-9))
    for s in range(n_steps):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        Lsub = L[idx]
        Zsub = Z[idx]
        Lsub += np.where(Zsub > 0, h * Zsub / k, 0.0)
        L[idx] = Lsub
        while True:
            live = (r_units[None, :] + X[idx].sum(axis=2)) > 0
            due = (nxt[idx] <= L[idx]) & live
            ai, aj = np.nonzero(due)
            if ai.size == 0:
                break
            ra = idx[ai]
            c = cnt[ra, aj]
            u = uniforms_np(key, reps[ra], 2 * aj + 1, c)
            m = (u[:, None] > thresholds[aj]).sum(axis=1)
            X[ra, :, aj] += steps[aj, m, :]
            cnt[ra, aj] = c + 1
            nxt[ra, aj] += -np.log(uniforms_np(key, reps[ra], 2 * aj, c + 1)) / safe_rates[aj]
        z = r_units[None, :] + X[idx].sum(axis=2)
        z = np.where(z > 0, z, 0)
        Z[idx] = z
        dead = np.all(z <= 0, axis=1)
        over = np.any(L[idx] > load_cap, axis=1)
        died = idx[dead]
        extinct[died] = True
        t_ext[died] = (s + 1) * h
        L_ext[died] = L[died]
        alive[died] = False
        alive[idx[over & ~dead]] = False
    return extinct, t_ext, L_ext


def lamperti_extinction(key, rep0, n, r_units, k, h, t_max, load_cap, tables, backend=None):
    """Euler-on-loads simulation driven by the same counter streams as :func:`first_passage`."""
    rates, cum, steps, nsup = tables
    args = (np.uint64(key), np.int64(rep0), int(n), np.asarray(r_units, dtype=np.int64), float(k), float(h),
            float(t_max), float(load_cap), np.asarray(rates, dtype=float), np.asarray(cum, dtype=float),
            np.asarray(steps, dtype=np.int64), np.asarray(nsup, dtype=np.int64))
    if resolve_backend(backend) == "numba":
        return _lamperti_nb(*args)
    return _lamperti_np(*args)
