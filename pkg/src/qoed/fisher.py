"""Born-rule outcome distributions, their parameter gradients and Fisher matrices."""
from __future__ import annotations

import csv
import json
import weakref
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ContractError, NotEstimableError, NumericalError, SingularMatrixError
from .linalg import PAULI, inverse_small, sym_eigvals
from .menu import Experiment, ExperimentMenu, product_povm, product_state
from .model import FLIPFLOP_SIGN, ModelParams, unitary

P_FLOOR = 1e-12
G_CEILING = 1e-6
DEFAULT_STEP = 1e-6
_PROB_SLACK = 1e-9


@dataclass(frozen=True)
class OutcomeDistribution:
    probs: np.ndarray
    grads: np.ndarray  # (outcomes, free params), d p_i / d theta_j


@dataclass(frozen=True)
class FisherMatrix:
    m: np.ndarray
    theta_at: ModelParams | None = None
    singular: bool = False

    @property
    def p(self) -> int:
        return self.m.shape[0]

    def inverse(self) -> np.ndarray:
        try:
            return inverse_small(self.m)
        except SingularMatrixError as exc:
            raise NotEstimableError(f"Fisher matrix is singular: {exc}") from exc


def _validate_probs(p: np.ndarray) -> np.ndarray:
    if np.any(p < -_PROB_SLACK) or np.any(p > 1.0 + _PROB_SLACK):
        bad = p[(p < -_PROB_SLACK) | (p > 1 + _PROB_SLACK)]
        raise NumericalError(f"outcome probability {bad.flat[0]:.3e} outside [0, 1]")
    return np.clip(p, 0.0, 1.0)


def _kind(params: ModelParams) -> int:
    return _kernels.CLOSED if params.propagator == "closed" else _kernels.RWA


def outcome_probs(exp: Experiment, params: ModelParams) -> np.ndarray:
    """``p_i = Tr(M_i U rho U^dagger)`` for the four product effects."""
    u = unitary(params, exp.t).u
    rt = u @ exp.rho() @ u.conj().T
    p = np.array([np.trace(m @ rt).real for m in exp.povm()])
    return _validate_probs(p)


def _raw_probs(exp: Experiment, params: ModelParams) -> np.ndarray:
    u = unitary(params, exp.t).u
    rt = u @ exp.rho() @ u.conj().T
    return np.array([np.trace(m @ rt).real for m in exp.povm()])


def outcome_grads(exp: Experiment, params: ModelParams, h: float = DEFAULT_STEP) -> OutcomeDistribution:
    """Central finite differences in each free parameter."""
    if not h > 0:
        raise ContractError("step h must be positive")
    grads = np.empty((4, params.n_free))
    for j, name in enumerate(params.free):
        grads[:, j] = (_raw_probs(exp, params.shifted(name, h)) - _raw_probs(exp, params.shifted(name, -h))) / (2 * h)
    return OutcomeDistribution(outcome_probs(exp, params), grads)


def fisher_from_distribution(probs, grads, p_floor: float = P_FLOOR, g_ceiling: float = G_CEILING):
    """``sum_i grad_i grad_i^T / p_i`` over the last-but-one axis.

    Works on stacks: ``probs (..., k)``, ``grads (..., k, p)``.  Outcomes with
    ``p <= p_floor`` contribute nothing; if such an outcome still has a
    gradient above ``g_ceiling`` the entry is flagged singular.

    Returns ``(fisher (..., p, p), singular (...))``.
    """
    probs = np.asarray(probs, dtype=float)
    grads = np.asarray(grads, dtype=float)
    live = probs > p_floor
    inv = np.where(live, 1.0 / np.where(live, probs, 1.0), 0.0)
    m = np.einsum("...kp,...kq,...k->...pq", grads, grads, inv)
    gnorm = np.linalg.norm(grads, axis=-1)
    singular = np.any(~live & (gnorm > g_ceiling), axis=-1)
    return 0.5 * (m + np.swapaxes(m, -1, -2)), singular


def experiment_fisher(exp: Experiment, params: ModelParams, h: float = DEFAULT_STEP) -> FisherMatrix:
    dist = outcome_grads(exp, params, h)
    m, singular = fisher_from_distribution(dist.probs, dist.grads)
    return FisherMatrix(m, params, bool(singular))


def combined_fisher(fishers, weights) -> FisherMatrix:
    """``sum_E w_E I_E`` for weights on the simplex."""
    fishers = list(fishers)
    w = np.asarray(weights, dtype=float).ravel()
    if len(fishers) != w.size:
        raise ContractError(f"{len(fishers)} Fisher matrices but {w.size} weights")
    if w.size == 0:
        raise ContractError("no Fisher matrices to combine")
    if np.any(w < 0):
        raise ContractError("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ContractError(f"weights sum to {w.sum():.12g}, not 1")
    mats = np.array([f.m if isinstance(f, FisherMatrix) else np.asarray(f, float) for f in fishers])
    theta = next((f.theta_at for f in fishers if isinstance(f, FisherMatrix)), None)
    singular = any(isinstance(f, FisherMatrix) and f.singular and wi > 0 for f, wi in zip(fishers, w))
    return FisherMatrix(np.tensordot(w, mats, axes=1), theta, singular)


def cramer_rao_trace_bound(f, n: int) -> float:
    """``Tr(I^-1) / n``: lower bound on the summed variances after ``n`` runs."""
    m = f.m if isinstance(f, FisherMatrix) else np.asarray(f, dtype=float)
    if n < 1:
        raise ContractError("n must be at least 1")
    if sym_eigvals(m)[0] <= 1e-12:
        raise NotEstimableError("Fisher matrix is singular; a parameter is not estimable under this design")
    try:
        return float(np.trace(inverse_small(m))) / n
    except SingularMatrixError as exc:
        raise NotEstimableError(str(exc)) from exc


# -- whole-menu evaluation -----------------------------------------------------------


class _MenuBasis:
    """Distinct preparations, measurements and times of a menu.

    ``probs`` for every experiment come from a table over (distinct
    preparation, distinct measurement) computed once per (parameters, time),
    so the cost is independent of how many experiments share them.
    """

    def __init__(self, menu: ExperimentMenu):
        n = len(menu)
        prep_key = menu.prep_vectors.reshape(n, 6)
        meas_key = np.column_stack([menu.meas_vectors.reshape(n, 6), menu.meas_scale])
        preps, self.prep_idx = np.unique(prep_key, axis=0, return_inverse=True)
        meas, self.meas_idx = np.unique(meas_key, axis=0, return_inverse=True)
        self.prep_idx = self.prep_idx.ravel()
        self.meas_idx = self.meas_idx.ravel()
        self.times, self.time_idx = np.unique(menu.times, return_inverse=True)
        self.time_idx = self.time_idx.ravel()
        self.rho = np.array([np.kron(_half(p[:3]), _half(p[3:])) for p in preps])
        effects = np.array([
            [np.kron(_half(m[:3] * m[6], s1), _half(m[3:6] * m[6], s2)) for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
            for m in meas
        ])
        # p[r, m, o] = sum_ij rho_t[r, j, i] M[m, o, i, j]
        self.effects_t = np.swapaxes(effects, -1, -2).reshape(len(meas) * 4, 16).T.copy()
        self.n_meas = len(meas)

    def table(self, params: ModelParams, t: float) -> np.ndarray:
        u = unitary(params, t).u
        rt = u @ self.rho @ u.conj().T
        return (rt.reshape(len(self.rho), 16) @ self.effects_t).real.reshape(len(self.rho), self.n_meas, 4)


def _half(v, sign=1.0):
    return 0.5 * (np.eye(2) + sign * np.tensordot(v, PAULI, axes=1))


_BASES: "weakref.WeakKeyDictionary[ExperimentMenu, _MenuBasis]" = weakref.WeakKeyDictionary()


def _basis(menu: ExperimentMenu) -> _MenuBasis:
    b = _BASES.get(menu)
    if b is None:
        b = _BASES[menu] = _MenuBasis(menu)
    return b


@dataclass
class ProbabilityCache:
    """(parameters, time) -> probability table; safe to share once warmed."""

    tables: dict = field(default_factory=dict)
    evaluations: int = 0

    def get(self, basis: _MenuBasis, params: ModelParams, t: float) -> np.ndarray:
        key = (id(basis), params.key(), float(t))
        tab = self.tables.get(key)
        if tab is None:
            tab = self.tables[key] = basis.table(params, t)
            self.evaluations += 1
        return tab


def _menu_raw_probs(menu: ExperimentMenu, params: ModelParams, cache: ProbabilityCache | None) -> np.ndarray:
    basis = _basis(menu)
    out = np.empty((len(menu), 4))
    for k, t in enumerate(basis.times):
        sel = basis.time_idx == k
        tab = cache.get(basis, params, t) if cache is not None else basis.table(params, t)
        out[sel] = tab[basis.prep_idx[sel], basis.meas_idx[sel]]
    return out


def menu_probabilities(menu: ExperimentMenu, params: ModelParams, cache: ProbabilityCache | None = None) -> np.ndarray:
    """Outcome probabilities ``(n, 4)`` for every experiment of ``menu``."""
    return _validate_probs(_menu_raw_probs(menu, params, cache))


def menu_gradients(menu, params, h=DEFAULT_STEP, cache=None):
    """``(probs (n, 4), grads (n, 4, p))`` by central differences."""
    grads = np.empty((len(menu), 4, params.n_free))
    for j, name in enumerate(params.free):
        hi = _menu_raw_probs(menu, params.shifted(name, h), cache)
        lo = _menu_raw_probs(menu, params.shifted(name, -h), cache)
        grads[:, :, j] = (hi - lo) / (2 * h)
    return menu_probabilities(menu, params, cache), grads


@dataclass(frozen=True)
class FisherStack:
    """Per-experiment Fisher matrices of a whole menu."""

    m: np.ndarray  # (n, p, p)
    theta_at: ModelParams
    singular: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return self.m.shape[0]

    def __getitem__(self, i) -> FisherMatrix:
        return FisherMatrix(self.m[i], self.theta_at, bool(self.singular[i]))

    def combined(self, weights) -> FisherMatrix:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(self),):
            raise ContractError("weights must have one entry per experiment")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ContractError("weights must lie on the simplex")
        return FisherMatrix(np.tensordot(w, self.m, axes=1), self.theta_at, bool(np.any(self.singular & (w > 0))))


def menu_fisher(menu: ExperimentMenu, params: ModelParams, h: float = DEFAULT_STEP,
                cache: ProbabilityCache | None = None) -> FisherStack:
    probs, grads = menu_gradients(menu, params, h, cache)
    m, singular = fisher_from_distribution(probs, grads)
    return FisherStack(m, params, singular)


def support_probs(menu: ExperimentMenu, ids, params: ModelParams) -> np.ndarray:
    """Probabilities of a few experiments through the compiled kernel (hot path)."""
    rho, povm, times = experiment_arrays(menu, ids)
    return _kernels.experiment_probs(params.F, params.G, params.delta_omega, _kind(params), FLIPFLOP_SIGN, times, rho, povm)


def experiment_arrays(menu: ExperimentMenu, ids):
    exps = [menu[i] for i in np.asarray(ids, dtype=int)]
    rho = np.array([e.rho() for e in exps]).reshape(len(exps), 4, 4)
    povm = np.array([e.povm() for e in exps]).reshape(len(exps), 4, 4, 4)
    times = np.array([e.t for e in exps], dtype=float)
    return rho, povm, times


# -- gate-error toy problem ----------------------------------------------------------


def gate_error_toy_fisher(eps_prep: float = 0.0, eps_meas: float = 0.0, angle: float = 0.0,
                          h: float = DEFAULT_STEP) -> float:
    """Single-qubit, single-parameter Fisher information under contraction errors.

    A +x state, contracted by ``1 - eps_prep``, is rotated about z by
    ``angle`` (the parameter) and measured along y with an axis contracted by
    ``1 - eps_meas``.  At ``angle = 0`` the ratio to the error-free value is
    ``(1 - eps_prep)^2 (1 - eps_meas)^2`` exactly.
    """

    def probs(a):
        rho = 0.5 * (np.eye(2) + (1 - eps_prep) * PAULI[0])
        u = np.array([[np.exp(-0.5j * a), 0], [0, np.exp(0.5j * a)]])
        rt = u @ rho @ u.conj().T
        effects = [0.5 * (np.eye(2) + s * (1 - eps_meas) * PAULI[1]) for s in (1, -1)]
        return np.array([np.trace(e @ rt).real for e in effects])

    g = (probs(angle + h) - probs(angle - h)) / (2 * h)
    m, _ = fisher_from_distribution(probs(angle), g[:, None])
    return float(m[0, 0])


# -- dump files ----------------------------------------------------------------------


def write_fisher_csv(path, stack: FisherStack, header_comments=()) -> None:
    if stack.m.shape[1] != 2:
        raise ContractError("CSV Fisher dump is defined for two free parameters; use JSON")
    with open(path, "w", newline="") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["id", "m11", "m12", "m22"])
        for i, m in enumerate(stack.m):
            w.writerow([i, repr(float(m[0, 0])), repr(float(m[0, 1])), repr(float(m[1, 1]))])


def write_fisher_json(path, stack: FisherStack, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc.update({
        "free": list(stack.theta_at.free),
        "theta_at": {n: getattr(stack.theta_at, n) for n in ("F", "G", "delta_omega")},
        "fisher": [{"id": i, "m": m.tolist(), "singular": bool(s)} for i, (m, s) in enumerate(zip(stack.m, stack.singular))],
    })
    Path(path).write_text(json.dumps(doc))
