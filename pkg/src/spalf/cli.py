"""Command-line front end.

Exit codes: 0 on success, 1 on usage or argument errors, 2 when an embedded
verification fails (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from typing import Optional

import numpy as np

from ._numbers import parse_matrix, parse_vector, to_jsonable
from .errors import ArgumentError, SpalfError
from .exponent import ExponentOracle, ModelSpec, eval_phi, jacobian_phi
from . import inversion, kemperman, lamperti, lattice, montecarlo
from .paths import PathBundle, smallest_solution


class UsageError(Exception):
    def __init__(self, message, usage_printed=False):
        super().__init__(message)
        self.usage_printed = usage_printed


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}", usage_printed=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, Fraction):
        return to_jsonable(obj)
    if isinstance(obj, montecarlo.MCEstimate):
        return _jsonable(obj.to_dict())
    return obj


def _load_model(path: Optional[str], k: Optional[int] = None, need_lattice: bool = False) -> ModelSpec:
    if path is None:
        raise UsageError("--model is required")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ArgumentError(f"cannot read model file {path}: {exc.strerror}") from None
    model = ModelSpec.from_json(text)
    if k is not None and not model.is_lattice:
        model = lattice.approximate_levy(model, k)
    if need_lattice and not model.is_lattice:
        raise ArgumentError("this command needs a lattice model; pass --k to approximate")
    return model


def _vector(text, name):
    if text is None:
        raise UsageError(f"--{name} is required")
    return parse_vector(text)


def _floats(text, name):
    return np.array([float(v) for v in _vector(text, name)])


def _matrix(text, d):
    if text is None:
        return np.zeros((d, d))
    try:
        return np.full((d, d), float(Fraction(text)))
    except (ValueError, ZeroDivisionError):
        return np.array([[float(v) for v in row] for row in parse_matrix(text)])


def _require_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for stochastic commands")
    if args.seed < 0:
        raise ArgumentError("--seed must be nonnegative")


# ----------------------------------------------------------------------------
# handlers return (result dict, csv rows or None, passed flag or None)
# ----------------------------------------------------------------------------
def _exponent_eval(args):
    model = _load_model(args.model)
    oracle = ExponentOracle(model=model)
    lam = _floats(args.lam, "lam")
    res = {"phi": eval_phi(oracle, lam)}
    if args.jacobian:
        res["jacobian"] = jacobian_phi(oracle, lam)
    return res, [["j", "phi"]] + [[j + 1, float(v)] for j, v in enumerate(res["phi"])], None, model


def _invert(args):
    model = _load_model(args.model)
    res = inversion.invert_exponent(model, _floats(args.target, "target"))
    out = {"value": res.value, "residual": res.residual, "iterations": res.iterations, "converged": res.converged}
    rows = [["j", "value", "residual"]] + [[j + 1, float(v), float(e)]
                                          for j, (v, e) in enumerate(zip(res.value, res.residual))]
    return out, rows, None, model


def _classify(args):
    model = _load_model(args.model)
    dc = inversion.classify_drift(model)
    res = dc.to_dict()
    rows = [["rho", "class", "irreducible", "phi0", "consistent"],
            [dc.rho, dc.classification, dc.irreducible, " ".join(map(str, res["phi0"] or [])), dc.consistent]]
    return res, rows, None if dc.consistent is None else dc.consistent, model


def _hypothesis(args):
    model = _load_model(args.model)
    holds, witness = inversion.check_hypothesis_H(model)
    res = {"holds": holds, "witness": witness, "note": None if holds else "not found within the search budget"}
    return res, [["holds", "witness"], [holds, " ".join(map(str, [] if witness is None else witness))]], None, model


def _hit(args):
    if args.paths is not None:
        with open(args.paths, encoding="utf-8") as fh:
            paths = PathBundle.from_dict(json.load(fh))
        hr = smallest_solution(paths, _vector(args.r, "r"))
        res = {"s": hr.s, "status": hr.status, "matrix_at": hr.matrix_at, "iterations": hr.iterations}
        rows = [["j", "s", "status"]] + [[j + 1, s, st] for j, (s, st) in enumerate(zip(hr.s, hr.status))]
        return res, rows, None, None
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    smp = montecarlo.simulate_hitting(model, _vector(args.r, "r"), args.horizon, args.n, args.seed,
                                      workers=args.workers)
    rows = [["replicate"] + [f"T{j + 1}" for j in range(model.d)] + ["all_hit"]]
    for a in range(min(args.n, 10_000)):
        rows.append([a] + [float(t) if h else "inf" for t, h in zip(smp.times[a], smp.hit[a])]
                    + [bool(smp.all_hit[a])])
    res = {"hit_fraction": float(smp.all_hit.mean()),
           "mean_T_given_hit": smp.times[smp.all_hit].mean(axis=0) if smp.all_hit.any() else None}
    return res, rows, None, model


def _record_out(rec, model):
    res = rec.to_dict()
    rows = [["check", "mc_mean", "stderr", "predicted", "bias_bound", "pass"],
            [rec.check, rec.mc.mean, rec.mc.stderr, rec.predicted, rec.bias_bound, rec.passed]]
    return res, rows, rec.passed, model


def _verify_laplace(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    rec = montecarlo.verify_laplace_T(model, _vector(args.r, "r"), _floats(args.lam, "lam"), args.horizon,
                                      args.n, args.seed, workers=args.workers)
    return _record_out(rec, model)


def _verify_finiteness(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    rec = montecarlo.verify_finiteness(model, _vector(args.r, "r"), args.horizon, args.n, args.seed,
                                       workers=args.workers)
    return _record_out(rec, model)


def _verify_increments(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    rec = montecarlo.verify_increments(model, _vector(args.r, "r"), _vector(args.r2, "r2"), args.horizon,
                                       args.n, args.seed, workers=args.workers)
    res = rec.to_dict()
    rows = [["coordinate", "ks_statistic", "p_value"]] + [
        [j + 1, s, p] for j, (s, p) in enumerate(zip(rec.extra["ks_statistics"], rec.extra["p_values"]))]
    return res, rows, rec.passed, model


def _verify_bivariate(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    rec = montecarlo.verify_bivariate_laplace(model, _vector(args.r, "r"), _floats(args.lam, "lam"),
                                              _matrix(args.mu, model.d), args.horizon, args.n, args.seed,
                                              workers=args.workers)
    return _record_out(rec, model)


def _verify_ballot(args):
    if args.law is not None:
        with open(args.law, encoding="utf-8") as fh:
            law = lattice.StepLaw.from_dict(json.load(fh))
    else:
        if args.p is None:
            raise UsageError("--p or --law is required")
        law = lattice.StepLaw.simple(args.d, args.k, args.p)
    n = [int(v) for v in _vector(args.n, "n")]
    if len(n) == 1 and law.d > 1:
        n = n * law.d
    targets = [parse_matrix(args.x)] if args.x is not None else lattice.reachable_ends(law, n)
    rows = [["instance", "x", "lhs", "rhs", "equal"]]
    items = []
    ok = True
    for idx, x in enumerate(targets):
        lhs, rhs = lattice.ballot_exact(law, n, x)
        eq = lhs == rhs
        ok &= eq
        xs = ";".join(",".join(str(to_jsonable(Fraction(v))) for v in row) for row in x)
        rows.append([idx, xs, to_jsonable(lhs), to_jsonable(rhs), eq])
        items.append({"x": xs, "lhs": lhs, "rhs": rhs, "equal": eq})
    return {"law": law.to_dict(), "n": n, "instances": items, "all_equal": ok}, rows, ok, None


def _verify_kemperman(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    sampler = (kemperman.TruncatedExponentialSampler() if args.sampler == "exponential"
               else kemperman.TruncatedGammaSampler())
    rec = kemperman.verify_kemperman_theorem(model, _floats(args.alpha, "alpha"), _floats(args.lam, "lam"),
                                             _matrix(args.mu, model.d), args.horizon, args.n, args.seed,
                                             t_sampler=sampler, workers=args.workers)
    rows = [["lhs", "lhs_stderr", "rhs", "rhs_stderr", "product_form", "truncation_bias", "pass"],
            [rec.lhs.mean, rec.lhs.stderr, rec.rhs.mean, rec.rhs.stderr, rec.product_form, rec.truncation_bias,
             rec.passed]]
    return rec.to_dict(), rows, rec.passed, model


def _kemperman_d1(args):
    tab = kemperman.kemperman_d1_analytic(args.a, args.q, args.r, _floats(args.t_grid, "t-grid"))
    rows = [["t", "formula", "inverse_gaussian"]] + [[float(t), float(f), float(g)] for t, f, g in
                                                     zip(tab["t"], tab["formula"], tab["inverse_gaussian"])]
    ok = bool(np.allclose(tab["formula"], tab["inverse_gaussian"], rtol=1e-10, atol=0)
              and abs(tab["mass"] - tab["mass_expected"]) <= 1e-6)
    return tab, rows, ok, None


def _levy_d1(args):
    lam = [float(v) for v in _vector(args.lam_grid, "lam-grid")] if args.lam_grid else []
    tab = kemperman.levy_measure_d1(args.a, args.q, _floats(args.t_grid, "t-grid"), lam)
    rows = [["t", "density"]] + [[float(t), float(v)] for t, v in zip(tab["t"], tab["density"])]
    ok = all(abs(e["quadrature"] - e["closed_form"]) <= 1e-5 for e in tab["exponent"]) and tab["envelope_ok"]
    return tab, rows, ok, None


def _lamperti(args):
    _require_seed(args)
    model = _load_model(args.model, args.k, need_lattice=True)
    r = _vector(args.r, "r")
    if args.replicate is not None:
        paths = montecarlo.replicate_paths(model, args.horizon, args.seed, args.replicate)
        traj = lamperti.solve_lamperti(paths, r, args.h, args.t_max, record_every=args.record_every)
        res = {"extinct": traj.extinct, "extinction_time": traj.extinction_time,
               "extinction_load": traj.extinction_load, "steps_recorded": int(traj.t.size)}
        passed = None
        if traj.extinct:
            passed = lamperti.check_load_identity(traj, smallest_solution(paths, r))
            res["load_identity"] = passed
        return res, traj.rows(), passed, model
    rec = lamperti.extinction_probability(model, r, args.t_max, args.n, args.seed, h=args.h)
    return _record_out(rec, model)


def _example2d(args):
    lam = _floats(args.lam, "lam") if args.lam is not None else None
    ex = inversion.example2d_closed_form(args.a1, args.a2, args.a12, args.a21, args.q1, args.q2, lam)
    res = {"phi": ex.phi, "in_D": ex.in_D, "rho": ex.rho, "phi0": ex.phi0,
           "class": inversion._classify(ex.rho)}
    rows = [["rho", "class", "phi0_1", "phi0_2", "phi_1", "phi_2", "in_D"],
            [ex.rho, res["class"], *map(float, ex.phi0), *(map(float, ex.phi) if ex.phi is not None else ("", "")),
             ex.in_D]]
    return res, rows, None, None


# ----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spalf", description="First-passage fields of spectrally positive additive Levy fields.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, handler, help_, model=True, stochastic=False, lattice_cmd=False):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(handler=handler)
        if model:
            p.add_argument("--model", help="model JSON file")
        if lattice_cmd:
            p.add_argument("--k", type=int, help="approximate a continuous model on the 1/k lattice")
        if stochastic:
            p.add_argument("--seed", type=int, help="base seed (required)")
            p.add_argument("--n", type=int, default=100_000, help="number of replicates")
            p.add_argument("--workers", type=int, default=montecarlo.default_workers())
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        return p

    p = add("exponent-eval", _exponent_eval, "evaluate the Laplace exponent")
    p.add_argument("--lam", required=True)
    p.add_argument("--jacobian", action="store_true")
    p = add("invert", _invert, "invert the Laplace exponent")
    p.add_argument("--target", required=True)
    add("classify", _classify, "classify the drift by the Perron root")
    add("hypothesis", _hypothesis, "search for a point with all exponents positive")
    p = add("hit", _hit, "smallest solution on a path file, or sampled hitting times", stochastic=True,
            lattice_cmd=True)
    p.add_argument("--paths", help="path bundle JSON file")
    p.add_argument("--r", required=True)
    p.add_argument("--horizon", type=float, default=50.0)
    p = add("verify-laplace", _verify_laplace, "Monte Carlo check of the Laplace transform of T_r",
            stochastic=True, lattice_cmd=True)
    p.add_argument("--r", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--horizon", type=float, default=50.0)
    p = add("verify-finiteness", _verify_finiteness, "Monte Carlo check of P(T_r finite)", stochastic=True,
            lattice_cmd=True)
    p.add_argument("--r", required=True)
    p.add_argument("--horizon", type=float, default=50.0)
    p = add("verify-increments", _verify_increments, "KS check of the increment law", stochastic=True,
            lattice_cmd=True)
    p.add_argument("--r", required=True)
    p.add_argument("--r2", required=True)
    p.add_argument("--horizon", type=float, default=50.0)
    p = add("verify-bivariate", _verify_bivariate, "Monte Carlo check of the bivariate transform",
            stochastic=True, lattice_cmd=True)
    p.add_argument("--r", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--mu", help="scalar or matrix 'a,b;c,d'")
    p.add_argument("--horizon", type=float, default=50.0)
    p = add("verify-ballot", _verify_ballot, "exact ballot identity by enumeration", model=False)
    p.add_argument("--law", help="step law JSON file")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--p", help="up-step probability of the simple law, e.g. 1/2")
    p.add_argument("--n", required=True, help="steps per column")
    p.add_argument("--x", help="end matrix 'a,b;c,d'; all reachable ones when omitted")
    p = add("verify-kemperman", _verify_kemperman, "three-way image-measure check", stochastic=True,
            lattice_cmd=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--mu", help="scalar or matrix 'a,b;c,d'")
    p.add_argument("--horizon", type=float, default=30.0)
    p.add_argument("--sampler", choices=("gamma", "exponential"), default="gamma")
    p = add("kemperman-d1", _kemperman_d1, "first-passage density of Brownian motion with drift", model=False)
    for name in ("a", "q", "r"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--t-grid", dest="t_grid", required=True)
    p = add("levy-measure-d1", _levy_d1, "Levy measure of the first-passage subordinator", model=False)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--t-grid", dest="t_grid", required=True)
    p.add_argument("--lam-grid", dest="lam_grid")
    p = add("lamperti", _lamperti, "branching populations driven by the field", stochastic=True, lattice_cmd=True)
    p.add_argument("--r", required=True)
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--t-max", dest="t_max", type=float, default=50.0)
    p.add_argument("--replicate", type=int, help="export the trajectory of one replicate")
    p.add_argument("--horizon", type=float, default=200.0, help="path horizon for --replicate")
    p.add_argument("--record-every", dest="record_every", type=int, default=1)
    p = add("example2d", _example2d, "closed forms for the 2D Brownian field", model=False)
    for name in ("a1", "a2", "a12", "a21", "q1", "q2"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--lam")
    return parser


def _emit(report: dict, rows, fmt: str, output: Optional[str]):
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        if rows is None:
            rows = [["key", "value"]] + [[k, json.dumps(v)] for k, v in _jsonable(report["result"]).items()]
        for row in rows:
            writer.writerow([json.dumps(_jsonable(v)) if isinstance(v, (list, dict)) else _jsonable(v) for v in row])
        text = buf.getvalue()
    else:
        text = json.dumps(_jsonable(report), indent=2) + "\n"
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result, rows, passed, model = args.handler(args)
    except UsageError as exc:
        if not exc.usage_printed:
            parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        return 1
    except (SpalfError, ValueError, KeyError) as exc:
        print(f"spalf {getattr(args, 'command', '')}: error: {exc}", file=sys.stderr)
        return 1
    config = {k: v for k, v in vars(args).items() if k != "handler"}
    report = {"command": args.command, "config": config,
              "model_hash": model.content_hash() if model is not None else None,
              "result": result, "pass": passed}
    _emit(report, rows, args.format, args.output)
    return 2 if passed is False else 0


def main() -> None:  # pragma: no cover
    sys.exit(run())
