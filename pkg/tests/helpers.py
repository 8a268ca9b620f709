"""Model builders and random instance generators shared by the test modules."""

import random
from fractions import Fraction

from spalf.exponent import Jump, ModelSpec
from spalf.inversion import example2d_model
from spalf.lattice import StepLaw, reachable_ends


def death_model():
    return ModelSpec(drift=[[0]], k=1, jumps=[[Jump(1, (-1,))]])


def walk_model(up, down, k=1):
    """Continuous-time walk on Z/k: +1/k at rate ``up`` and -1/k at rate ``down``."""
    u = Fraction(1, k)
    return ModelSpec(drift=[[0]], k=k, jumps=[[Jump(up, (u,)), Jump(down, (-u,))]])


def coupled_model(up=0.5):
    return ModelSpec(drift=[[0, 0], [0, 0]], k=1,
                     jumps=[[Jump(1, (-1, 0)), Jump(up, (-1, 1))], [Jump(1, (0, -1)), Jump(up, (1, -1))]])


def brownian2d():
    return example2d_model(-1, -1, 0.5, 0.5, 1, 1)


def random_law(rng: random.Random, d: int, k: int) -> StepLaw:
    cols = []
    for j in range(d):
        steps = set()
        down = [0] * d
        down[j] = -1
        steps.add(tuple(down))
        while len(steps) < rng.randint(2, 3):
            s = [rng.randint(0, 1) for _ in range(d)]
            s[j] = rng.randint(-1, 2)
            steps.add(tuple(s))
        weights = [rng.randint(1, 5) for _ in steps]
        tot = sum(weights)
        cols.append(tuple((tuple(Fraction(u, k) for u in s), Fraction(w, tot)) for s, w in zip(sorted(steps), weights)))
    return StepLaw(k, tuple(cols))


def random_ballot_instance(rng: random.Random):
    """(law, n, x) with d in {1,2}, k in {1,2}, sum(n) <= 6 and a reachable end matrix x."""
    while True:
        d = rng.choice([1, 2])
        k = rng.choice([1, 2])
        law = random_law(rng, d, k)
        n = [rng.randint(1, 6)] if d == 1 else [rng.randint(1, 3), rng.randint(1, 3)]
        ends = reachable_ends(law, n)
        if ends:
            return law, n, rng.choice(ends)


def random_model(rng: random.Random, d: int) -> ModelSpec:
    """Drift plus compound Poisson, with diffusion on some columns; (H) is not guaranteed."""
    drift = [[rng.uniform(-2.0, 0.5) if i == j else rng.choice([0.0, rng.uniform(0, 0.6)])
              for j in range(d)] for i in range(d)]
    q = [rng.choice([0.0, rng.uniform(0.2, 1.5)]) for _ in range(d)]
    jumps = []
    for _ in range(d):
        col = []
        for _ in range(rng.randint(0, 2)):
            col.append(Jump(rng.uniform(0.1, 1.0), tuple(rng.choice([0.0, rng.uniform(0, 1.5)]) for _ in range(d))))
        jumps.append([jp for jp in col if any(jp.delta)])
    return ModelSpec(drift=drift, q=q, jumps=jumps)


def random_example2d(rng: random.Random, boundary: bool = False):
    """Parameters (a1, a2, a12, a21, q1, q2) of the 2D Brownian field."""
    q1, q2 = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)
    if boundary:
        a1, a2 = -rng.uniform(0.3, 2.0), -rng.uniform(0.3, 2.0)
        a12 = rng.uniform(0.2, 1.0)
        return a1, a2, a12, a1 * a2 / a12, q1, q2
    return rng.uniform(-2, 1), rng.uniform(-2, 1), rng.uniform(0, 1), rng.uniform(0, 1), q1, q2
