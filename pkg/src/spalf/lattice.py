"""Downward skip-free random walks on Z/k, the exact ballot identity and lattice approximation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ._numbers import as_number, to_jsonable
from .errors import ArgumentError, ResourceError
from .exponent import Jump, ModelSpec
from .paths import HIT, PathBundle, smallest_solution

ENUMERATION_BUDGET = 10**7


@dataclass(frozen=True)
class StepLaw:
    """Per-column step distributions with exact rational probabilities.

    ``columns[j]`` is a tuple of ``(step, probability)`` where ``step`` is a
    length-d tuple of Fractions on the ``Z/k`` grid.
    """

    k: int
    columns: tuple

    def __post_init__(self):
        cols = []
        d = len(self.columns)
        for j, col in enumerate(self.columns):
            entries = []
            total = Fraction(0)
            for step, prob in col:
                step = tuple(Fraction(as_number(x)) for x in step)
                prob = Fraction(as_number(prob))
                if len(step) != d:
                    raise ArgumentError(f"column {j}: step {step} has wrong length")
                if prob <= 0:
                    raise ArgumentError(f"column {j}: probabilities must be positive")
                for i, x in enumerate(step):
                    if (x * self.k).denominator != 1:
                        raise ArgumentError(f"column {j}: step {x} is off the 1/{self.k} grid")
                    if i == j and x < Fraction(-1, self.k):
                        raise ArgumentError(f"column {j}: diagonal step below -1/{self.k}")
                    if i != j and x < 0:
                        raise ArgumentError(f"column {j}: negative off-diagonal step")
                entries.append((step, prob))
                total += prob
            if total != 1:
                raise ArgumentError(f"column {j}: probabilities sum to {total}, not 1")
            cols.append(tuple(entries))
        object.__setattr__(self, "columns", tuple(cols))

    @property
    def d(self) -> int:
        return len(self.columns)

    @classmethod
    def simple(cls, d: int, k: int, p) -> "StepLaw":
        """Canonical two-point law per column.

        d=1: +1/k with probability p, -1/k otherwise.  d>1: column j steps -1/k on
        its diagonal with probability 1-p, else +1/k on the next coordinate.
        """
        p = Fraction(as_number(p))
        if not 0 < p < 1:
            raise ArgumentError("p must lie strictly between 0 and 1")
        unit = Fraction(1, k)
        cols = []
        for j in range(d):
            down = [Fraction(0)] * d
            down[j] = -unit
            up = [Fraction(0)] * d
            up[j if d == 1 else (j + 1) % d] = unit
            cols.append(((tuple(up), p), (tuple(down), 1 - p)))
        return cls(k, tuple(cols))

    def to_model(self, rates: Sequence) -> ModelSpec:
        d = self.d
        jumps = [[Jump(Fraction(as_number(rates[j])) * prob if not isinstance(rates[j], float)
                       else float(rates[j]) * float(prob), step)
                  for step, prob in col] for j, col in enumerate(self.columns)]
        return ModelSpec([[0] * d for _ in range(d)], None, jumps, self.k)

    def to_dict(self) -> dict:
        return {"k": self.k, "columns": [[{"step": [to_jsonable(x) for x in s], "prob": to_jsonable(p)}
                                          for s, p in col] for col in self.columns]}

    @classmethod
    def from_dict(cls, data: dict) -> "StepLaw":
        return cls(int(data["k"]), tuple(tuple((e["step"], e["prob"]) for e in col) for col in data["columns"]))


@dataclass(frozen=True)
class WalkBundle:
    """Realized step sequences of the d independent column walks."""

    k: int
    steps: tuple

    @property
    def d(self) -> int:
        return len(self.steps)

    @property
    def n(self) -> tuple:
        return tuple(len(s) for s in self.steps)

    def value(self, j: int, m: int) -> tuple:
        """Column ``j`` after ``m`` steps, as exact Fractions."""
        acc = [Fraction(0)] * self.d
        for step in self.steps[j][:m]:
            acc = [a + Fraction(x) for a, x in zip(acc, step)]
        return tuple(acc)

    def end_matrix(self) -> tuple:
        cols = [self.value(j, len(self.steps[j])) for j in range(self.d)]
        return tuple(tuple(cols[j][i] for j in range(self.d)) for i in range(self.d))

    def to_paths(self) -> PathBundle:
        """Unit-time-spaced lattice paths: step m of column j happens at time m."""
        horizon = max(1, max(self.n))
        events = [[(m + 1, step) for m, step in enumerate(col)] for col in self.steps]
        return PathBundle.lattice(self.k, horizon, events)


def walk_hitting_steps(walks: WalkBundle, r) -> tuple:
    """First-hitting step counts of the walks (None where unresolved within the recorded steps)."""
    res = smallest_solution(walks.to_paths(), r)
    return tuple(int(round(s)) if st == HIT else None for s, st in zip(res.s, res.status))


def bareiss_det(matrix: Sequence[Sequence[int]]) -> int:
    """Determinant of an integer matrix by fraction-free elimination."""
    a = [[int(x) for x in row] for row in matrix]
    n = len(a)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for c in range(n - 1):
        if a[c][c] == 0:
            swap = next((r for r in range(c + 1, n) if a[r][c] != 0), None)
            if swap is None:
                return 0
            a[c], a[swap] = a[swap], a[c]
            sign = -sign
        for r in range(c + 1, n):
            for col in range(c + 1, n):
                a[r][col] = (a[r][col] * a[c][c] - a[r][c] * a[c][col]) // prev
        prev = a[c][c]
    return sign * a[n - 1][n - 1]


def exact_det(matrix: Sequence[Sequence[Fraction]]) -> Fraction:
    """Exact determinant of a rational matrix (scaled to integers, then Bareiss)."""
    rows = [[Fraction(x) for x in row] for row in matrix]
    n = len(rows)
    lcm = 1
    for row in rows:
        for x in row:
            lcm = lcm * x.denominator // math.gcd(lcm, x.denominator)
    ints = [[int(x * lcm) for x in row] for row in rows]
    return Fraction(bareiss_det(ints), lcm ** n)


def _column_sequences(col, n_j: int, target: tuple):
    """All step sequences of length ``n_j`` ending at ``target``, with their probabilities."""
    out = []
    d = len(target)
    for seq in itertools.product(range(len(col)), repeat=n_j):
        end = [Fraction(0)] * d
        prob = Fraction(1)
        for m in seq:
            step, p = col[m]
            prob *= p
            for i in range(d):
                end[i] += step[i]
        if tuple(end) == target:
            out.append((tuple(col[m][0] for m in seq), prob))
    return out


def ballot_exact(law: StepLaw, n: Sequence[int], x) -> tuple:
    """Both sides of the discrete ballot identity, as exact Fractions.

    lhs = P(T^S_r = n, S_n = x) by exhaustive enumeration (first hitting through the
    path solver on unit-spaced paths).  rhs = k^d det(-x) / (n_1...n_d) * P(S_n = x).
    Enumeration only keeps column sequences ending at the matching column of ``x``;
    any other sequence has S_n != x and contributes to neither side.
    """
    d, k = law.d, law.k
    n = tuple(int(v) for v in n)
    if len(n) != d or any(v < 1 for v in n):
        raise ArgumentError("n must be a vector of positive integers")
    xs = [[Fraction(as_number(v)) for v in row] for row in x]
    if len(xs) != d or any(len(row) != d for row in xs):
        raise ArgumentError(f"x must be {d}x{d}")
    for i in range(d):
        for j in range(d):
            if (xs[i][j] * k).denominator != 1:
                raise ArgumentError("x must lie on the grid")
            if i != j and xs[i][j] < 0:
                raise ArgumentError("x must be essentially nonnegative")
    r = [-sum(row) for row in xs]
    if any(v < 0 for v in r):
        raise ArgumentError("x must have nonpositive row sums")
    size = 1
    for j in range(d):
        size *= len(law.columns[j]) ** n[j]
    if size > ENUMERATION_BUDGET:
        raise ResourceError(f"enumeration of {size} configurations exceeds budget {ENUMERATION_BUDGET}")

    per_column = []
    for j in range(d):
        target = tuple(xs[i][j] for i in range(d))
        per_column.append(_column_sequences(law.columns[j], n[j], target))
    free = Fraction(1)
    for seqs in per_column:
        free *= sum((p for _, p in seqs), Fraction(0))

    lhs = Fraction(0)
    if free:
        for combo in itertools.product(*per_column):
            walks = WalkBundle(k, tuple(seq for seq, _ in combo))
            if walk_hitting_steps(walks, r) == n:
                prob = Fraction(1)
                for _, p in combo:
                    prob *= p
                lhs += prob
    neg = [[-v for v in row] for row in xs]
    rhs = Fraction(k) ** d * exact_det(neg) / math.prod(n) * free
    return lhs, rhs


def reachable_ends(law: StepLaw, n: Sequence[int]) -> list:
    """All end matrices ``S_n`` of positive probability with nonpositive row sums."""
    d = law.d
    ends = []
    for j in range(d):
        cols = {tuple([Fraction(0)] * d)}
        for _ in range(int(n[j])):
            cols = {tuple(a + b for a, b in zip(c, step)) for c in cols for step, _ in law.columns[j]}
        ends.append(sorted(cols))
    out = []
    for combo in itertools.product(*ends):
        x = tuple(tuple(combo[j][i] for j in range(d)) for i in range(d))
        if all(sum(row) <= 0 for row in x):
            out.append(x)
    return out


def poissonize(law: StepLaw, rates: Sequence[float], horizon: float, seed: int) -> PathBundle:
    """Attach i.i.d. law steps to independent Poisson clocks of the given rates on [0, H]."""
    d = law.d
    if len(rates) != d or any(not float(v) > 0 for v in rates):
        raise ArgumentError("rates must be positive, one per column")
    if not 0 < horizon < math.inf:
        raise ArgumentError("horizon must be positive and finite")
    rng = np.random.default_rng(seed)
    events = []
    for j, col in enumerate(law.columns):
        count = rng.poisson(float(rates[j]) * horizon)
        times = np.sort(rng.uniform(0.0, horizon, size=count))
        probs = np.array([float(p) for _, p in col])
        picks = rng.choice(len(col), size=count, p=probs / probs.sum())
        events.append([(t, col[m][0]) for t, m in zip(times, picks)])
    return PathBundle.lattice(law.k, horizon, events)


def path_steps(paths: PathBundle) -> WalkBundle:
    """Embedded step sequences of lattice paths (event order per column)."""
    k = paths.k
    return WalkBundle(k, tuple(tuple(tuple(Fraction(int(u), k) for u in row) for row in paths.deltas[j])
                               for j in range(paths.d)))


def approximate_levy(model: ModelSpec, k: int) -> ModelSpec:
    """Lattice model on Z/k approximating ``model``.

    Drift a[i][j] becomes sign(a)/k steps on row i at rate k|a|; a Brownian part
    q_j becomes +-1/k diagonal steps at rate k^2 q_j / 2 each; jumps of Euclidean
    size >= 1/k are floored coordinatewise to the grid, smaller ones dropped.
    """
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ArgumentError("k must be a positive integer")
    k = int(k)
    d = model.d
    acc = [dict() for _ in range(d)]

    def add(j, delta, rate):
        key = tuple(delta)
        acc[j][key] = acc[j].get(key, 0.0) + float(rate)

    for j in range(d):
        for i in range(d):
            a = float(model.drift[i][j])
            if a != 0:
                delta = [Fraction(0)] * d
                delta[i] = Fraction(1 if a > 0 else -1, k)
                add(j, delta, k * abs(a))
        qj = float(model.q[j])
        if qj > 0:
            for sign in (1, -1):
                delta = [Fraction(0)] * d
                delta[j] = Fraction(sign, k)
                add(j, delta, k * k * qj / 2)
        for jp in model.jumps[j]:
            vec = [float(x) for x in jp.delta]
            if math.sqrt(sum(v * v for v in vec)) < 1.0 / k:
                continue
            delta = [Fraction(math.floor(v * k + 1e-9), k) for v in vec]
            if all(x == 0 for x in delta):
                continue
            add(j, delta, jp.rate)
    jumps = [[Jump(rate, delta) for delta, rate in sorted(col.items())] for col in acc]
    return ModelSpec([[0] * d for _ in range(d)], None, jumps, k)


def discrete_joint_law_check(model: ModelSpec, r, t_grid, x, n_samples: int, seed: int,
                             width: float = 0.1, horizon: Optional[float] = None, backend=None):
    """Monte Carlo check of the lattice joint law of (T_r, X at T_r).

    For each ``t`` in ``t_grid`` the joint density of (T_r, X_{T_r} = x) averaged
    over the box ``prod [t_j (1 - width), t_j (1 + width)]`` is compared to the box
    average of ``k^d det(-x) / prod t_j * P(X_t = x)``, the latter estimated by
    simulating ``X_t`` at uniform points of the box.
    """
    from .montecarlo import joint_law_box_check

    return joint_law_box_check(model, r, t_grid, x, n_samples, seed, width, horizon, backend)
