"""A-optimal designs over a finite experiment menu.

The solver works directly on the weight simplex: multiplicative updates
``w_E <- w_E (Tr(F^-1 I_E F^-1) / Tr F^-1)^gamma`` interleaved with
vertex-exchange steps that move weight from the worst support point to the
best candidate.  Optimality is certified by the equivalence gap and,
independently, by the block-matrix (Schur complement) PSD test.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ContractError, NotEstimableError, SingularMatrixError
from .fisher import FisherMatrix, FisherStack
from .linalg import inverse_small, sym_eigvals

SUPPORT_TOL = 1e-6
MERGE_TOL = 1e-9
CERT_TOL = 1e-9
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class DesignOptions:
    gamma: float = 1.0
    max_iters: int = 5000
    rel_gap_tol: float = 1e-5  # stop when gap <= rel_gap_tol * objective
    gap_tol: float | None = None  # absolute override
    exchange_every: int = 1
    support_tol: float = SUPPORT_TOL
    merge_tol: float = MERGE_TOL
    merge_duplicates: bool = True
    multistart: int = 0
    seed: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractError("gamma must be positive")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if self.multistart and self.seed is None:
            raise ContractError("multistart needs a seed")


@dataclass(frozen=True)
class DesignWeights:
    weights: np.ndarray
    support_tol: float = SUPPORT_TOL

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ContractError("weights must be a non-empty vector")
        if np.any(w < 0):
            raise ContractError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ContractError(f"weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > self.support_tol)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def from_support(cls, n: int, ids, values) -> "DesignWeights":
        w = np.zeros(n)
        ids = np.asarray(ids, dtype=int)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ContractError("support id outside menu")
        w[ids] = values
        return cls(w)

    @classmethod
    def uniform(cls, n: int) -> "DesignWeights":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class SupportClass:
    """Support experiments sharing one Fisher matrix."""

    ids: tuple
    weight: float
    fisher: np.ndarray


@dataclass
class DesignResult:
    weights: DesignWeights
    fisher: FisherMatrix
    objective: float
    equivalence_gap: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    merged_support: list = field(default_factory=list)
    options: DesignOptions = field(default_factory=DesignOptions)

    @property
    def gap_tol(self) -> float:
        return _gap_tol(self.options, self.objective)


def _gap_tol(opts: DesignOptions, objective: float) -> float:
    return opts.gap_tol if opts.gap_tol is not None else opts.rel_gap_tol * objective


def _stack(fishers) -> tuple[np.ndarray, object]:
    if isinstance(fishers, FisherStack):
        return np.asarray(fishers.m, dtype=float), fishers.theta_at
    if isinstance(fishers, np.ndarray):
        m = np.asarray(fishers, dtype=float)
        theta = None
    else:
        fishers = list(fishers)
        if not fishers:
            raise ContractError("no Fisher matrices given")
        m = np.array([f.m if isinstance(f, FisherMatrix) else np.asarray(f, float) for f in fishers])
        theta = next((f.theta_at for f in fishers if isinstance(f, FisherMatrix)), None)
    if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] == 0:
        raise ContractError(f"expected a stack of square matrices, got shape {m.shape}")
    return m, theta


def _inv_trace(f: np.ndarray) -> float:
    """``Tr f^-1`` or +inf when ``f`` is numerically singular."""
    if f.shape == (2, 2):
        a, b, c = f[0, 0], 0.5 * (f[0, 1] + f[1, 0]), f[1, 1]
        det = a * c - b * b
        if not det > 1e-12 * (abs(a) + abs(c)) ** 2:
            return np.inf
        return float((a + c) / det)
    try:
        return float(np.trace(inverse_small(f)))
    except SingularMatrixError:
        return np.inf


def _inv(f: np.ndarray) -> np.ndarray:
    """Inverse with a closed form for the 2x2 case used in the solver loop."""
    if f.shape == (2, 2):
        a, b, c = f[0, 0], 0.5 * (f[0, 1] + f[1, 0]), f[1, 1]
        det = a * c - b * b
        if det > 1e-12 * (abs(a) + abs(c)) ** 2:
            return np.array([[c, -b], [-b, a]]) / det
    return inverse_small(f)


def a_objective(fishers, weights) -> float:
    """``Tr(sum_E w_E I_E)^-1`` (infinite when singular)."""
    m, _ = _stack(fishers)
    w = np.asarray(weights.weights if isinstance(weights, DesignWeights) else weights, dtype=float)
    return _inv_trace(np.tensordot(w, m, axes=1))


def _directional(mflat: np.ndarray, finv: np.ndarray) -> np.ndarray:
    """``Tr(F^-1 I_E F^-1)`` for every E."""
    a = finv @ finv
    return mflat @ a.ravel()


def equivalence_gap(fishers, weights) -> float:
    """``max_E Tr(F^-1 I_E F^-1) - Tr F^-1``; zero or below at an A-optimal design."""
    m, _ = _stack(fishers)
    w = np.asarray(weights.weights if isinstance(weights, DesignWeights) else weights, dtype=float)
    if w.shape != (m.shape[0],):
        raise ContractError("one weight per Fisher matrix required")
    try:
        finv = inverse_small(np.tensordot(w, m, axes=1))
    except SingularMatrixError as exc:
        raise NotEstimableError(f"combined Fisher matrix is singular: {exc}") from exc
    d = _directional(m.reshape(len(m), -1), finv)
    # w @ d equals Tr F^-1 identically; using it makes the single-point gap exactly zero
    return float(d.max() - w @ d)


def schur_certificate(q, f, tol: float = CERT_TOL) -> bool:
    """True iff ``[[Q, I], [I, F]]`` is PSD, i.e. ``Q >= F^-1`` (for ``F > 0``)."""
    q = np.asarray(q, dtype=float)
    f = np.asarray(f.m if isinstance(f, FisherMatrix) else f, dtype=float)
    if q.shape != f.shape or q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ContractError("Q and F must be square and of equal size")
    p = q.shape[0]
    block = np.block([[q, np.eye(p)], [np.eye(p), f]])
    return bool(sym_eigvals(block)[0] >= -tol)


# -- solver --------------------------------------------------------------------------


def _merge_classes(m: np.ndarray, tol: float):
    """Group indices whose Fisher matrices agree to about ``tol``.

    Upper-triangle entries are binned on a grid of spacing ``tol`` and
    touching bins are joined, so matrices within ``tol`` always merge and
    merged matrices differ by less than ``2 tol`` per entry within a bin
    chain.  Returns ``(representatives, labels)`` with classes numbered in
    order of first appearance.
    """
    n, p = m.shape[0], m.shape[1]
    iu = np.triu_indices(p)
    key = np.floor(m[:, iu[0], iu[1]] / tol).astype(np.int64)
    ukeys, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    lookup = {tuple(k): j for j, k in enumerate(ukeys.tolist())}
    parent = list(range(len(ukeys)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    offsets = [o for o in itertools.product((-1, 0, 1), repeat=len(iu[0])) if o > (0,) * len(o)]
    for j, k in enumerate(ukeys.tolist()):
        for o in offsets:
            other = lookup.get(tuple(a + b for a, b in zip(k, o)))
            if other is not None:
                ra, rb = find(j), find(other)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(j) for j in range(len(ukeys))])
    raw = roots[inv]
    # renumber by first appearance in index order
    _, rep_idx, labels = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(rep_idx, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return rep_idx[order], relabel[labels.ravel()]


def _solve(mflat: np.ndarray, p: int, w: np.ndarray, opts: DesignOptions):
    """Core iteration on a reduced problem; returns (w, obj, gap, iters, converged, history)."""
    fmat = (w @ mflat).reshape(p, p)
    obj = _inv_trace(fmat)
    if not np.isfinite(obj):
        raise NotEstimableError("starting design has a singular Fisher matrix")
    history = [obj]
    gap = np.inf
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        finv = _inv(fmat)
        d = _directional(mflat, finv)
        gap = float(d.max() - obj)
        if gap <= _gap_tol(opts, obj):
            converged = True
            it -= 1
            break

        # multiplicative step; halve the exponent until the objective does not rise
        gamma = opts.gamma
        ratio = np.maximum(d / obj, 0.0)
        accepted = False
        while gamma > 1e-6:
            cand = w * ratio ** gamma
            cand /= cand.sum()
            f_c = (cand @ mflat).reshape(p, p)
            o_c = _inv_trace(f_c)
            if o_c <= obj:
                w, fmat, obj = cand, f_c, o_c
                accepted = True
                break
            gamma *= 0.5

        prev = history[-1]
        if opts.exchange_every and (it % opts.exchange_every == 0 or not accepted):
            w, fmat, obj = _exchange_step(mflat, p, w, fmat, obj)
        history.append(obj)
        if not obj < prev:
            # stalled at rounding level; no step can lower the objective further
            finv = _inv(fmat)
            gap = float(_directional(mflat, finv).max() - obj)
            converged = gap <= _gap_tol(opts, obj)
            break
    else:
        finv = _inv(fmat)
        gap = float(_directional(mflat, finv).max() - obj)
        converged = gap <= _gap_tol(opts, obj)
    return w, obj, gap, it, converged, history


def _exchange_step(mflat, p, w, fmat, obj):
    """Shift weight from the worst support point to the best experiment."""
    finv = _inv(fmat)
    d = _directional(mflat, finv)
    best = int(np.argmax(d))
    live = np.flatnonzero(w > 0)
    worst = int(live[np.argmin(d[live])])
    if best == worst:
        return w, fmat, obj
    cap = w[worst]
    diff = (mflat[best] - mflat[worst]).reshape(p, p)

    def f(delta):
        return _inv_trace(fmat + delta * diff)

    if p == 2:
        delta = _line_min_2x2(fmat, diff, cap)
    else:
        res = minimize_scalar(f, bounds=(0.0, cap), method="bounded", options={"xatol": 1e-12 + 1e-9 * cap})
        delta = float(res.x) if f(res.x) < f(cap) else cap
    new_obj = f(delta)
    if not new_obj < obj:
        return w, fmat, obj
    w = w.copy()
    w[best] += delta
    w[worst] -= delta
    if w[worst] < 1e-15:
        w[worst] = 0.0
    return w, fmat + delta * diff, new_obj


def _line_min_2x2(f: np.ndarray, d: np.ndarray, cap: float) -> float:
    """argmin over [0, cap] of ``Tr(f + x d)^-1`` for 2x2 symmetric ``f``, ``d``.

    With ``T(x) = T0 + x t`` and ``det(f + x d) = d0 + d1 x + d2 x^2`` the
    stationary points solve ``t d2 x^2 + 2 T0 d2 x + T0 d1 - t d0 = 0``.
    """
    a, b, c = f[0, 0], f[0, 1], f[1, 1]
    da, db, dc = d[0, 0], d[0, 1], d[1, 1]
    t0, t = a + c, da + dc
    d0 = a * c - b * b
    d1 = a * dc + c * da - 2 * b * db
    d2 = da * dc - db * db
    cands = [0.0, cap]
    # d2 == 0 leaves a constant equation: the objective is monotone on the segment
    if d2 != 0 and t != 0:
        # x^2 + 2 (T0 / t) x + (T0 d1 - t d0) / (t d2) = 0
        h = t0 / t
        disc = h * h - (t0 * d1 - t * d0) / (t * d2)
        if disc >= 0:
            for r in (-h - np.sqrt(disc), -h + np.sqrt(disc)):
                if 0.0 < r < cap:
                    cands.append(float(r))
    elif d2 != 0 and t0 != 0:
        r = -d1 / (2 * d2)
        if 0.0 < r < cap:
            cands.append(float(r))
    vals = [_inv_trace(f + x * d) for x in cands]
    return cands[int(np.argmin(vals))]


def optimize_a_design(fishers, opts: DesignOptions | None = None) -> DesignResult:
    """Minimize ``Tr(sum_E w_E I_E)^-1`` over the simplex."""
    opts = opts or DesignOptions()
    m, theta = _stack(fishers)
    n, p = m.shape[0], m.shape[1]
    if not np.allclose(m, np.swapaxes(m, 1, 2), atol=1e-10, rtol=0):
        raise ContractError("Fisher matrices must be symmetric")

    active = np.flatnonzero(np.trace(m, axis1=1, axis2=2) > 1e-12)
    if active.size == 0:
        raise NotEstimableError("every experiment carries zero information")
    if opts.merge_duplicates:
        reps, labels = _merge_classes(m[active], opts.merge_tol)
        red = m[active][reps]
        counts = np.bincount(labels, minlength=len(reps)).astype(float)
    else:
        labels = np.arange(active.size)
        red = m[active]
        counts = np.ones(active.size)
    mflat = red.reshape(len(red), -1)
    if _inv_trace(red.sum(axis=0)) == np.inf:
        raise NotEstimableError("no combination of the menu gives an invertible Fisher matrix")

    starts = [counts / counts.sum()]
    if opts.multistart:
        rng = np.random.default_rng(opts.seed)
        starts += [rng.dirichlet(np.ones(len(red))) for _ in range(opts.multistart)]
    best = None
    for w0 in starts:
        try:
            out = _solve(mflat, p, w0, opts)
        except NotEstimableError:
            continue
        if best is None or out[1] < best[1]:
            best = out
    w_red, obj, gap, iters, converged, history = best

    # polish on the surviving classes so vanishing ones are driven to zero
    live = np.flatnonzero(w_red > opts.support_tol)
    if 0 < live.size < len(w_red):
        sub = w_red[live] / w_red[live].sum()
        polish = DesignOptions(gamma=opts.gamma, max_iters=opts.max_iters, gap_tol=1e-10 * obj,
                               exchange_every=opts.exchange_every)
        ws, o2, _, it2, _, h2 = _solve(mflat[live], p, sub, polish)
        if o2 <= obj:
            cand = np.zeros_like(w_red)
            cand[live] = ws
            finv = _inv((cand @ mflat).reshape(p, p))
            g2 = float(_directional(mflat, finv).max() - o2)
            if g2 <= max(gap, _gap_tol(opts, o2)):
                w_red, obj, gap, iters, history = cand, o2, g2, iters + it2, history + h2[1:]
                converged = gap <= _gap_tol(opts, obj)

    # spread each class weight equally over its members
    w = np.zeros(n)
    w[active] = w_red[labels] / counts[labels]
    w = np.where(w > 1e-15, w, 0.0)
    w /= w.sum()
    weights = DesignWeights(w, opts.support_tol)
    fmat = np.tensordot(w, m, axes=1)
    result = DesignResult(
        weights=weights,
        fisher=FisherMatrix(fmat, theta),
        objective=_inv_trace(fmat),
        equivalence_gap=equivalence_gap(m, w),
        iterations=iters,
        converged=converged,
        history=history,
        options=opts,
    )
    result.merged_support = merged_support(m, weights, opts.merge_tol)
    return result


def merged_support(fishers, weights: DesignWeights, tol: float = MERGE_TOL) -> list[SupportClass]:
    """Support grouped by identical Fisher matrices, heaviest class first."""
    m, _ = _stack(fishers)
    ids = weights.support
    if ids.size == 0:
        return []
    reps, labels = _merge_classes(m[ids], tol)
    out = []
    for k, r in enumerate(reps):
        members = ids[labels == k]
        out.append(SupportClass(tuple(int(i) for i in members), float(weights.weights[members].sum()), m[ids[r]]))
    out.sort(key=lambda c: (-c.weight, c.ids[0]))
    return out


# -- brute-force oracle --------------------------------------------------------------


def _compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    rows = np.zeros((1, 0), dtype=np.int64)
    # grow one coordinate at a time; keys (prefix, next) keep lexicographic order
    for _ in range(parts - 1):
        used = rows.sum(axis=1)
        reps = total - used + 1
        prefix = np.repeat(rows, reps, axis=0)
        starts = np.cumsum(reps) - reps
        nxt = np.arange(int(reps.sum())) - np.repeat(starts, reps)
        rows = np.column_stack([prefix, nxt])
    return np.column_stack([rows, total - rows.sum(axis=1)])


def _batch_inv_trace(f: np.ndarray) -> np.ndarray:
    if f.shape[1] == 2:
        a, b, c = f[:, 0, 0], f[:, 0, 1], f[:, 1, 1]
        det = a * c - b * b
        scale = np.maximum(np.abs(a) + np.abs(c), 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (a + c) / det
        return np.where(det > 1e-12 * scale * scale, out, np.inf)
    eig = np.linalg.eigvalsh(f)
    with np.errstate(divide="ignore"):
        out = np.sum(1.0 / eig, axis=1)
    return np.where(eig[:, 0] > 1e-12 * np.abs(eig[:, -1]), out, np.inf)


def brute_force_design(fishers, grid_step: float = 0.01) -> DesignWeights:
    """Best point of the simplex grid with spacing ``grid_step``.

    Ties go to the lexicographically lowest weight vector.
    """
    m, _ = _stack(fishers)
    n = m.shape[0]
    if n > 6:
        raise ContractError("brute force is limited to 6 experiments")
    if not 0 < grid_step <= 0.02:
        raise ContractError("grid_step must lie in (0, 0.02]")
    k = int(round(1.0 / grid_step))
    if abs(k * grid_step - 1.0) > 1e-9:
        raise ContractError("1 / grid_step must be an integer")
    if n == 1:
        return DesignWeights(np.ones(1))
    p = m.shape[1]
    flat = m.reshape(n, -1)
    best_val, best_row = np.inf, None
    # chunk on the first coordinate to bound memory; chunks are in lexicographic order
    for first in range(k + 1):
        rest = _compositions(k - first, n - 1).astype(float)
        f = (rest @ flat[1:] + first * flat[0]).reshape(-1, p, p) / k
        vals = _batch_inv_trace(f)
        low = vals.min()
        if not np.isfinite(low):
            continue
        # values equal up to summation rounding count as ties
        j = int(np.flatnonzero(vals <= low * (1 + TIE_RTOL))[0])
        if best_row is None or vals[j] < best_val * (1 - TIE_RTOL):
            best_val, best_row = vals[j], np.concatenate([[first], rest[j]])
    if best_row is None:
        raise NotEstimableError("no grid point gives an invertible Fisher matrix")
    return DesignWeights(best_row / k)


# -- file format ---------------------------------------------------------------------


def design_to_json(result: DesignResult, extra: dict | None = None) -> dict:
    theta = result.fisher.theta_at
    doc = dict(extra or {})
    doc.update({
        "theta_at": None if theta is None else {"F": theta.F, "G": theta.G, "delta_omega": theta.delta_omega,
                                                "free": list(theta.free), "propagator": theta.propagator},
        "objective": result.objective,
        "gap": result.equivalence_gap,
        "support": [{"id": int(i), "weight": float(result.weights.weights[i])} for i in result.weights.support],
        "merged_support": [{"ids": list(c.ids), "weight": c.weight, "fisher": c.fisher.tolist()}
                           for c in result.merged_support],
        "fisher": result.fisher.m.tolist(),
        "options": asdict(result.options),
        "iterations": result.iterations,
        "converged": result.converged,
        "n": len(result.weights),
    })
    return doc


def save_design(path, result: DesignResult, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(design_to_json(result, extra)))


def load_design_weights(path_or_doc, n: int | None = None) -> DesignWeights:
    """Weights from a design file; support weights are renormalized to absorb trimming."""
    doc = path_or_doc if isinstance(path_or_doc, dict) else json.loads(Path(path_or_doc).read_text())
    support = doc.get("support")
    if not support:
        raise ContractError("design file has no support")
    n = n if n is not None else doc.get("n")
    if n is None:
        n = max(s["id"] for s in support) + 1
    ids = [s["id"] for s in support]
    vals = np.array([s["weight"] for s in support], dtype=float)
    return DesignWeights.from_support(n, ids, vals / vals.sum())
