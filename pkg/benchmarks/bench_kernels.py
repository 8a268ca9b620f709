"""Compare the numba and numpy backends of the simulation kernels.

    python benchmarks/bench_kernels.py --n 20000 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from spalf import _kernels
from spalf.exponent import Jump, ModelSpec
from spalf.inversion import example2d_model
from spalf.lattice import approximate_levy


def models():
    death = ModelSpec(drift=[[0]], k=1, jumps=[[Jump(1, (-1,))]])
    coupled = ModelSpec(drift=[[0, 0], [0, 0]], k=1,
                        jumps=[[Jump(1, (-1, 0)), Jump(0.5, (-1, 1))], [Jump(1, (0, -1)), Jump(0.5, (1, -1))]])
    brownian = approximate_levy(example2d_model(-1, -1, 0.5, 0.5, 1, 1), 10)
    return [("death d=1", death, [4], 30.0), ("coupled d=2", coupled, [2, 2], 60.0),
            ("brownian d=2 k=10", brownian, [5, 5], 20.0)]


def best_time(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    key = _kernels.seed_key(2024)
    print(f"{'kernel':<12} {'model':<20} {'numba s':>9} {'numpy s':>9} {'speedup':>8}  agree")
    for name, model, r, H in models():
        tables = model.lattice_tables()
        ru = np.broadcast_to(np.array(r), (args.n, model.d))
        # warm the JIT cache outside the timed region
        _kernels.first_passage(key, 0, ru[:8], H, tables, backend="numba")
        t_nb, a = best_time(lambda: _kernels.first_passage(key, 0, ru, H, tables, backend="numba"), args.repeat)
        t_np, b = best_time(lambda: _kernels.first_passage(key, 0, ru, H, tables, backend="numpy"), args.repeat)
        same = (np.array_equal(a[0], b[0]) and np.array_equal(a[2], b[2]) and np.array_equal(a[3], b[3])
                and np.allclose(a[1], b[1], rtol=1e-12, atol=1e-12))
        print(f"{'hitting':<12} {name:<20} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:8.1f}  {same}")

        m = max(1, args.n // 10)
        lam = lambda backend: _kernels.lamperti_extinction(key, 0, m, np.array(r), model.k, 0.01, 50.0, 200.0,
                                                          tables, backend)
        lam("numba")
        t_nb, a = best_time(lambda: lam("numba"), args.repeat)
        t_np, b = best_time(lambda: lam("numpy"), args.repeat)
        agree = float(np.mean(a[0] == b[0]))
        print(f"{'lamperti':<12} {name:<20} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:8.1f}  {agree:.4f}")


if __name__ == "__main__":
    main()
