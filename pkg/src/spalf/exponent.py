"""Model parametrization and Laplace exponents.

A model is a d-column field: column ``j`` carries a drift vector ``drift[:, j]``,
a Brownian coefficient ``q[j]`` on its diagonal entry and a finite set of
compound-Poisson jumps ``(rate, delta)``.  The Laplace exponent of column ``j`` is

    phi_j(lam) = -sum_i a[i, j] lam_i + q_j lam_j**2 / 2 - sum rate * (1 - exp(-<lam, delta>)).

Lattice models (``k`` set) live on the grid ``Z / k``: they carry no drift or
diffusion, and every delta has diagonal coordinate >= -1/k.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from ._numbers import Number, as_number, to_jsonable
from .errors import ArgumentError

MAX_LATTICE_RATE = 1e9
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class Jump:
    """One compound-Poisson component of a column: jumps of size ``delta`` at ``rate``."""

    rate: Number
    delta: tuple

    def __post_init__(self):
        rate = as_number(self.rate)
        if not rate > 0:
            raise ArgumentError(f"jump rate must be positive, got {self.rate!r}")
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "delta", tuple(as_number(x) for x in self.delta))


def _snap_to_grid(x: Number, k: int) -> Fraction:
    if isinstance(x, (int, Fraction)):
        fx = Fraction(x)
        if (fx * k).denominator != 1:
            raise ArgumentError(f"value {x} is not on the 1/{k} grid")
        return fx
    m = round(x * k)
    if abs(x * k - m) > _GRID_TOL:
        raise ArgumentError(f"value {x} is not on the 1/{k} grid")
    return Fraction(m, k)


def _scaled_rate(k: int, a: Number) -> Number:
    if isinstance(a, float):
        return k * abs(a)
    return Fraction(k) * abs(Fraction(a))


@dataclass(frozen=True)
class ModelSpec:
    """Full parametrization of a spectrally positive additive Lévy field.

    Parameters
    ----------
    drift : d x d matrix
        ``drift[i][j]`` is the drift of the entry ``X^{i,j}``; off-diagonal entries are >= 0.
    q : length-d sequence, optional
        Brownian coefficients of the diagonal entries; must be zero for lattice models.
    jumps : per-column sequences of :class:`Jump` or ``(rate, delta)`` pairs, optional
    k : int, optional
        Lattice resolution.  When set, drift entries are converted into +-1/k jumps
        at rate ``k*|a|`` and every delta must lie on the ``Z/k`` grid.
    """

    drift: tuple
    q: tuple = None
    jumps: tuple = None
    k: Optional[int] = None

    def __post_init__(self):
        drift = tuple(tuple(as_number(x) for x in row) for row in self.drift)
        d = len(drift)
        if d == 0 or any(len(row) != d for row in drift):
            raise ArgumentError("drift must be a non-empty square matrix")
        q = tuple(as_number(x) for x in (self.q if self.q is not None else [0] * d))
        if len(q) != d:
            raise ArgumentError(f"q has length {len(q)}, expected {d}")
        raw_jumps = self.jumps if self.jumps is not None else [[] for _ in range(d)]
        if len(raw_jumps) != d:
            raise ArgumentError(f"jumps must list {d} columns, got {len(raw_jumps)}")
        columns = []
        for col in raw_jumps:
            entries = []
            for item in col:
                jump = item if isinstance(item, Jump) else Jump(*item)
                if len(jump.delta) != d:
                    raise ArgumentError(f"jump delta {jump.delta} has wrong length")
                entries.append(jump)
            columns.append(entries)

        for j in range(d):
            if q[j] < 0:
                raise ArgumentError(f"q[{j}] must be nonnegative")
            for i in range(d):
                if i != j and drift[i][j] < 0:
                    raise ArgumentError(f"off-diagonal drift a[{i}][{j}] must be >= 0")

        k = self.k
        if k is not None:
            if isinstance(k, bool) or int(k) != k or k < 1:
                raise ArgumentError(f"lattice resolution must be a positive integer, got {k!r}")
            k = int(k)
            if any(x != 0 for x in q):
                raise ArgumentError("lattice models carry no diffusion (q must be 0)")
            for j in range(d):
                for i in range(d):
                    a = drift[i][j]
                    if a == 0:
                        continue
                    rate = _scaled_rate(k, a)
                    if rate > MAX_LATTICE_RATE:
                        raise ArgumentError(
                            f"drift a[{i}][{j}]={a} needs rate {rate} > {MAX_LATTICE_RATE:g} at k={k}")
                    delta = [Fraction(0)] * d
                    delta[i] = Fraction(1 if a > 0 else -1, k)
                    columns[j].append(Jump(rate, tuple(delta)))
            drift = tuple(tuple(0 for _ in range(d)) for _ in range(d))
            snapped = []
            for j, col in enumerate(columns):
                snapped.append([Jump(jp.rate, tuple(_snap_to_grid(x, k) for x in jp.delta)) for jp in col])
            columns = snapped
            for j, col in enumerate(columns):
                for jp in col:
                    for i, x in enumerate(jp.delta):
                        if i == j and x < Fraction(-1, k):
                            raise ArgumentError(f"column {j}: diagonal step {x} below -1/{k}")
                        if i != j and x < 0:
                            raise ArgumentError(f"column {j}: negative off-diagonal step {x}")
        else:
            for j, col in enumerate(columns):
                for jp in col:
                    if any(x < 0 for x in jp.delta):
                        raise ArgumentError(f"column {j}: negative jump coordinate in {jp.delta}")

        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "jumps", tuple(tuple(col) for col in columns))
        object.__setattr__(self, "k", k)

    # ---- views -------------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.drift)

    @property
    def is_lattice(self) -> bool:
        return self.k is not None

    @cached_property
    def drift_array(self) -> np.ndarray:
        a = np.array([[float(x) for x in row] for row in self.drift], dtype=float)
        a.setflags(write=False)
        return a

    @cached_property
    def q_array(self) -> np.ndarray:
        q = np.array([float(x) for x in self.q], dtype=float)
        q.setflags(write=False)
        return q

    @cached_property
    def jump_arrays(self) -> tuple:
        """Per column: (rates of shape (m,), deltas of shape (m, d)) as floats."""
        out = []
        for col in self.jumps:
            rates = np.array([float(jp.rate) for jp in col], dtype=float)
            deltas = np.array([[float(x) for x in jp.delta] for jp in col], dtype=float).reshape(len(col), self.d)
            rates.setflags(write=False)
            deltas.setflags(write=False)
            out.append((rates, deltas))
        return tuple(out)

    def lattice_tables(self):
        """Sampling tables for a lattice model.

        Returns total rates ``(d,)``, cumulative step probabilities ``(d, M)``,
        integer steps in units of 1/k ``(d, M, d)`` and support sizes ``(d,)``.
        Identical deltas within a column are merged.
        """
        if not self.is_lattice:
            raise ArgumentError("sampling tables exist only for lattice models")
        d, k = self.d, self.k
        merged = []
        for col in self.jumps:
            acc: dict = {}
            for jp in col:
                key = tuple(int(x * k) for x in jp.delta)
                acc[key] = acc.get(key, 0.0) + float(jp.rate)
            merged.append(sorted(acc.items()))
        width = max(1, max(len(m) for m in merged))
        rates = np.zeros(d)
        cum = np.ones((d, width))
        steps = np.zeros((d, width, d), dtype=np.int64)
        nsup = np.zeros(d, dtype=np.int64)
        for j, items in enumerate(merged):
            if not items:
                continue
            total = sum(rate for _, rate in items)
            rates[j] = total
            nsup[j] = len(items)
            c = 0.0
            for m, (key, rate) in enumerate(items):
                c += rate / total
                cum[j, m] = c
                steps[j, m] = key
            cum[j, len(items) - 1:] = 1.0
        return rates, cum, steps, nsup

    def esscher_model(self, mu) -> "ModelSpec":
        """Exponentially tilted model used for simulation under the shifted measure.

        Jump rates become ``rate * exp(-<mu[:, j], delta>)`` and the diagonal drift of
        column ``j`` moves by ``q_j * mu[j, j]`` so that its exponent equals the shift
        ``phi_j(lam + mu[:, j]) - phi_j(mu[:, j])``.
        """
        mu = _as_shift(mu, self.d)
        d = self.d
        drift = [[float(self.drift[i][j]) for j in range(d)] for i in range(d)]
        for j in range(d):
            drift[j][j] -= float(self.q[j]) * mu[j, j]
        jumps = []
        for j, col in enumerate(self.jumps):
            entries = []
            for jp in col:
                tilt = math.exp(-float(np.dot(mu[:, j], [float(x) for x in jp.delta])))
                entries.append(Jump(float(jp.rate) * tilt, jp.delta))
            jumps.append(entries)
        if self.is_lattice:
            if any(drift[j][j] != 0 for j in range(d)):
                raise ArgumentError("tilted lattice model acquired a drift")
            drift = [[0] * d for _ in range(d)]
        return ModelSpec(drift, self.q, jumps, self.k)

    # ---- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "drift": [[to_jsonable(x) for x in row] for row in self.drift],
            "q": [to_jsonable(x) for x in self.q],
            "jumps": [[{"rate": to_jsonable(jp.rate), "delta": [to_jsonable(x) for x in jp.delta]}
                       for jp in col] for col in self.jumps],
        }
        if self.k is not None:
            out["k"] = self.k
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        if not isinstance(data, dict):
            raise ArgumentError("model config must be a JSON object")
        for key in ("d", "drift"):
            if key not in data:
                raise ArgumentError(f"model config is missing key '{key}'")
        d = data["d"]
        if not isinstance(d, int) or d < 1:
            raise ArgumentError("model config key 'd' must be a positive integer")
        drift = data["drift"]
        if not isinstance(drift, list) or len(drift) != d:
            raise ArgumentError(f"model config key 'drift' must be a {d}x{d} row-major matrix")
        jumps = []
        for j, col in enumerate(data.get("jumps", [[] for _ in range(d)])):
            entries = []
            for pos, item in enumerate(col):
                if not isinstance(item, dict) or "rate" not in item or "delta" not in item:
                    raise ArgumentError(f"model config key 'jumps[{j}][{pos}]' needs 'rate' and 'delta'")
                entries.append(Jump(item["rate"], item["delta"]))
            jumps.append(entries)
        return cls(drift, data.get("q"), jumps, data.get("k"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"model config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _as_shift(mu, d: int) -> np.ndarray:
    m = np.asarray(mu, dtype=float)
    if m.ndim == 0:
        m = np.full((d, d), float(m))
    if m.shape != (d, d):
        raise ArgumentError(f"shift must be a {d}x{d} matrix, got shape {m.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ArgumentError("shift matrix must have finite nonnegative entries")
    return m


@dataclass(frozen=True, eq=False)
class ExponentOracle:
    """Evaluator of phi, its Jacobian and Esscher-shifted versions.

    Either ``model`` or ``closed_form`` (a callable lam -> phi vector) is required.
    ``closed_form_jacobian`` is optional; central differences are used otherwise.
    ``shift`` holds the Esscher matrix whose column j shifts column j's argument.
    """

    model: Optional[ModelSpec] = None
    closed_form: Optional[Callable] = None
    closed_form_jacobian: Optional[Callable] = None
    dim: Optional[int] = None
    shift: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.model is None and self.closed_form is None:
            raise ArgumentError("an oracle needs a model or a closed form")
        if self.model is None and self.dim is None:
            raise ArgumentError("closed-form oracles must declare their dimension")
        if self.shift is not None:
            object.__setattr__(self, "shift", _as_shift(self.shift, self.d))
        object.__setattr__(self, "_cache", {})

    @property
    def d(self) -> int:
        return self.model.d if self.model is not None else int(self.dim)

    # unshifted exponent --------------------------------------------------
    def _base_phi(self, lam: np.ndarray) -> np.ndarray:
        if self.closed_form is not None:
            return np.asarray(self.closed_form(lam), dtype=float)
        m = self.model
        out = -(m.drift_array.T @ lam) + 0.5 * m.q_array * lam * lam
        for j, (rates, deltas) in enumerate(m.jump_arrays):
            if rates.size:
                out[j] += float(rates @ np.expm1(-(deltas @ lam)))
        return out

    def _base_jac(self, lam: np.ndarray) -> np.ndarray:
        if self.closed_form is not None:
            if self.closed_form_jacobian is not None:
                return np.asarray(self.closed_form_jacobian(lam), dtype=float)
            return _central_jacobian(self._base_phi, lam)
        m = self.model
        jac = np.array(m.drift_array, dtype=float)
        jac[np.diag_indices(m.d)] -= m.q_array * lam
        for j, (rates, deltas) in enumerate(m.jump_arrays):
            if rates.size:
                jac[:, j] += deltas.T @ (rates * np.exp(-(deltas @ lam)))
        return jac

    # public evaluations (no argument checks; see eval_phi for the checked form)
    def phi(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.shift is None:
            return self._base_phi(lam)
        out = np.empty(self.d)
        for j in range(self.d):
            col = self.shift[:, j]
            out[j] = self._base_phi(lam + col)[j] - self._base_phi(col)[j]
        return out

    def jac(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.shift is None:
            return self._base_jac(lam)
        out = np.empty((self.d, self.d))
        for j in range(self.d):
            out[:, j] = self._base_jac(lam + self.shift[:, j])[:, j]
        return out


def _central_jacobian(f: Callable, lam: np.ndarray) -> np.ndarray:
    d = lam.size
    jac = np.empty((d, d))
    for i in range(d):
        h = 1e-6 * (1.0 + abs(lam[i]))
        up, dn = lam.copy(), lam.copy()
        up[i] += h
        dn[i] = max(0.0, dn[i] - h)
        # J[i, j] = -d phi_j / d lam_i
        jac[i, :] = -(f(up) - f(dn)) / (up[i] - dn[i])
    return jac


def _check_lambda(oracle: ExponentOracle, lam) -> np.ndarray:
    x = np.asarray(lam, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (oracle.d,):
        raise ArgumentError(f"lambda must have length {oracle.d}, got shape {x.shape}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ArgumentError("lambda must be finite and nonnegative")
    return x


def eval_phi(oracle: ExponentOracle, lam: Sequence[float]) -> np.ndarray:
    """Return ``(phi_1(lam), ..., phi_d(lam))``."""
    return oracle.phi(_check_lambda(oracle, lam))


def jacobian_phi(oracle: ExponentOracle, lam: Sequence[float]) -> np.ndarray:
    """Return ``J`` with ``J[i, j] = -d phi_j / d lam_i``; ``J(0)`` is the mean matrix."""
    return oracle.jac(_check_lambda(oracle, lam))


def mean_matrix(oracle: ExponentOracle) -> np.ndarray:
    return jacobian_phi(oracle, np.zeros(oracle.d))


def esscher_exponent(oracle: ExponentOracle, mu) -> ExponentOracle:
    """Oracle for ``phi_j(lam + mu[:, j]) - phi_j(mu[:, j])``; shifts compose additively."""
    shift = _as_shift(mu, oracle.d)
    if oracle.shift is not None:
        shift = shift + oracle.shift
    return ExponentOracle(oracle.model, oracle.closed_form, oracle.closed_form_jacobian, oracle.dim, shift)


def special_product(A, B) -> float:
    """Sum over columns of the inner products of matching columns."""
    a = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ArgumentError(f"special product needs matching matrices, got {a.shape} and {b.shape}")
    return float(np.einsum("ij,ij->", a, b))
