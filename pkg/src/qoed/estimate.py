"""Simulated data, multinomial likelihood and maximum-likelihood estimation.

Random draws use numpy's Philox counter-based generator keyed by
``(seed, experiment id)``; the counter supplies the draw index.  Each
experiment therefore has its own stream and datasets do not depend on
evaluation order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .design import DesignOptions, DesignResult, DesignWeights, optimize_a_design
from .errors import ContractError, InvalidStartError
from .fisher import P_FLOOR, FisherMatrix, cramer_rao_trace_bound, experiment_arrays, menu_fisher
from .menu import ExperimentMenu
from .model import FLIPFLOP_SIGN, ModelParams

RNG_ALGORITHM = "philox4x64-10/multinomial/v1"
DATASET_FORMAT_VERSION = 1
ARGMAX_RTOL = 1e-12


@dataclass(frozen=True)
class DatasetEntry:
    id: int
    n_runs: int
    counts: tuple


@dataclass(frozen=True)
class OutcomeDataset:
    entries: tuple
    seed: int | None = None
    truth_hidden: bool = True

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractError("duplicate experiment id in dataset")
        for e in self.entries:
            if len(e.counts) != 4 or min(e.counts) < 0 or sum(e.counts) != e.n_runs:
                raise ContractError(f"entry {e.id}: counts {e.counts} do not add up to n_runs={e.n_runs}")

    @property
    def total_n(self) -> int:
        return sum(e.n_runs for e in self.entries)

    @property
    def ids(self) -> np.ndarray:
        return np.array([e.id for e in self.entries], dtype=int)

    @property
    def counts(self) -> np.ndarray:
        return np.array([e.counts for e in self.entries], dtype=np.int64).reshape(len(self.entries), 4)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_counts(cls, ids, counts, seed=None, truth_hidden=True) -> "OutcomeDataset":
        counts = np.asarray(counts, dtype=np.int64).reshape(-1, 4)
        return cls(tuple(DatasetEntry(int(i), int(c.sum()), tuple(int(x) for x in c)) for i, c in zip(ids, counts)),
                   seed, truth_hidden)

    def pooled(self, other: "OutcomeDataset") -> "OutcomeDataset":
        """Counts of both datasets summed per experiment id."""
        acc: dict[int, np.ndarray] = {}
        for ds in (self, other):
            for e in ds.entries:
                acc[e.id] = acc.get(e.id, np.zeros(4, dtype=np.int64)) + np.array(e.counts)
        ids = sorted(acc)
        return OutcomeDataset.from_counts(ids, [acc[i] for i in ids], None, self.truth_hidden)

    def to_json(self, extra: dict | None = None) -> dict:
        doc = dict(extra or {})
        doc.update({
            "version": DATASET_FORMAT_VERSION,
            "rng": RNG_ALGORITHM,
            "seed": self.seed,
            "total_n": self.total_n,
            "entries": [{"id": e.id, "n_runs": e.n_runs, "counts": list(e.counts)} for e in self.entries],
        })
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "OutcomeDataset":
        try:
            entries = tuple(DatasetEntry(int(e["id"]), int(e["n_runs"]), tuple(int(c) for c in e["counts"]))
                            for e in doc["entries"])
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed dataset: {exc}") from exc
        ds = cls(entries, doc.get("seed"))
        if "total_n" in doc and doc["total_n"] != ds.total_n:
            raise ContractError("total_n disagrees with the entries")
        return ds

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(extra)))

    @classmethod
    def load(cls, path) -> "OutcomeDataset":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: not a JSON dataset ({exc})") from exc


def _weights_array(weights) -> np.ndarray:
    w = weights.weights if isinstance(weights, DesignWeights) else np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ContractError("weights must be a vector on the simplex")
    return w


def allocate_runs(weights, n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` runs; ties go to the lower index."""
    if n < 1:
        raise ContractError("n must be at least 1")
    w = _weights_array(weights)
    quota = w * n
    base = np.floor(quota).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        frac = quota - base
        order = np.lexsort((np.arange(w.size), -frac))
        base[order[:short]] += 1
    return base


def _rng(seed: int, exp_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, exp_id], dtype=np.uint64)))


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ContractError("seed must be a non-negative 64-bit integer")
    return seed


def _kind(params: ModelParams) -> int:
    return _kernels.CLOSED if params.propagator == "closed" else _kernels.RWA


def _probs(menu: ExperimentMenu, ids, params: ModelParams) -> np.ndarray:
    rho, povm, times = experiment_arrays(menu, ids)
    return _kernels.experiment_probs(params.F, params.G, params.delta_omega, _kind(params), FLIPFLOP_SIGN,
                                     times, rho, povm)


def sample_dataset(menu: ExperimentMenu, weights, truth: ModelParams, n: int, seed: int) -> OutcomeDataset:
    """Multinomial counts for ``n`` runs allocated by ``weights``."""
    seed = _check_seed(seed)
    w = _weights_array(weights)
    if w.size != len(menu):
        raise ContractError(f"{w.size} weights for a menu of {len(menu)}")
    runs = allocate_runs(w, n)
    ids = np.flatnonzero(runs)
    probs = np.clip(_probs(menu, ids, truth), 0.0, 1.0)
    counts = []
    for i, p, k in zip(ids, probs, runs[ids]):
        counts.append(_rng(seed, int(i)).multinomial(int(k), p / p.sum()))
    return OutcomeDataset.from_counts(ids, counts, seed)


def _check_ids(dataset: OutcomeDataset, menu: ExperimentMenu) -> None:
    ids = dataset.ids
    if ids.size and (ids.min() < 0 or ids.max() >= len(menu)):
        raise ContractError("dataset refers to experiments outside the menu")


def _loglik_from_probs(counts: np.ndarray, probs: np.ndarray) -> float:
    seen = counts > 0
    if np.any(probs[seen] <= P_FLOOR):
        return -np.inf
    return float(np.sum(counts[seen] * np.log(probs[seen])))


def log_likelihood(dataset: OutcomeDataset, menu: ExperimentMenu, params: ModelParams) -> float:
    """``sum_E sum_i n_i^E ln p_i^E`` (constants dropped); ``-inf`` when an observed outcome is impossible."""
    _check_ids(dataset, menu)
    if len(dataset) == 0:
        return 0.0
    return _loglik_from_probs(dataset.counts, _probs(menu, dataset.ids, params))


# -- grid search ---------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    f_min: float
    f_max: float
    nf: int
    g_min: float
    g_max: float
    ng: int

    def __post_init__(self):
        vals = (self.f_min, self.f_max, self.g_min, self.g_max)
        if not all(np.isfinite(v) for v in vals):
            raise ContractError("grid bounds must be finite")
        if self.nf < 2 or self.ng < 2:
            raise ContractError("grid needs at least 2 points per axis")
        if not (self.f_max > self.f_min and self.g_max > self.g_min):
            raise ContractError("grid bounds must be increasing")

    @property
    def f_axis(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.nf)

    @property
    def g_axis(self) -> np.ndarray:
        return np.linspace(self.g_min, self.g_max, self.ng)

    @property
    def step(self) -> tuple[float, float]:
        return (self.f_max - self.f_min) / (self.nf - 1), (self.g_max - self.g_min) / (self.ng - 1)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """``fmin:fmax:nf,gmin:gmax:ng``"""
        try:
            fpart, gpart = text.split(",")
            f0, f1, nf = fpart.split(":")
            g0, g1, ng = gpart.split(":")
            return cls(float(f0), float(f1), int(nf), float(g0), float(g1), int(ng))
        except ValueError as exc:
            raise ContractError(f"bad grid spec {text!r}: expected fmin:fmax:nf,gmin:gmax:ng") from exc

    def to_text(self) -> str:
        return f"{float(self.f_min)!r}:{float(self.f_max)!r}:{self.nf},{float(self.g_min)!r}:{float(self.g_max)!r}:{self.ng}"


def default_grid(times) -> GridSpec:
    """F in [0, 3]; G over one period ``[0, pi/t]`` for a single probe time, else ``[0, 2 pi]``."""
    times = np.unique(np.asarray(times, dtype=float))
    if times.size == 1 and times[0] > 0:
        return GridSpec(0.0, 3.0, 301, 0.0, float(np.pi / times[0]), 301)
    return GridSpec(0.0, 3.0, 301, 0.0, 2 * np.pi, 601)


@dataclass(frozen=True)
class LikelihoodSurface:
    f_axis: np.ndarray
    g_axis: np.ndarray
    loglik: np.ndarray  # (nf, ng), -inf allowed
    argmax: tuple

    def write_csv(self, path, header_comments=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["f", "g", "loglik"])
            for i, f in enumerate(self.f_axis):
                for j, g in enumerate(self.g_axis):
                    w.writerow([repr(float(f)), repr(float(g)), repr(float(self.loglik[i, j]))])


class GridLogProb:
    """``ln p`` over an (F, G) grid for a fixed set of experiments.

    Built once and reused for every dataset on the same experiments, which
    is what makes Monte-Carlo trials cheap.
    """

    def __init__(self, menu: ExperimentMenu, ids, grid: GridSpec, template: ModelParams):
        if tuple(template.free) != ("F", "G"):
            raise ContractError("grid search is defined over (F, G)")
        self.ids = np.asarray(ids, dtype=int)
        self.grid = grid
        rho, povm, times = experiment_arrays(menu, self.ids)
        probs = _kernels.grid_probs(grid.f_axis, grid.g_axis, template.delta_omega, _kind(template),
                                    FLIPFLOP_SIGN, times, rho, povm)
        with np.errstate(divide="ignore"):
            self.logp = np.where(probs > P_FLOOR, np.log(np.maximum(probs, P_FLOOR)), -np.inf)

    def surface(self, dataset: OutcomeDataset) -> LikelihoodSurface:
        pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            cols = np.array([pos[int(i)] for i in dataset.ids], dtype=int)
        except KeyError as exc:
            raise ContractError(f"experiment {exc} not in the precomputed grid") from exc
        counts = dataset.counts
        nf, ng = self.grid.nf, self.grid.ng
        ll = np.zeros((nf, ng))
        for c, cnt in zip(cols, counts):
            for o in np.flatnonzero(cnt):
                ll += cnt[o] * self.logp[:, :, c, o]
        top = ll.max()
        # first maximum (lowest F, then lowest G); rounding-level differences count as ties
        tol = ARGMAX_RTOL * (1.0 + abs(top)) if np.isfinite(top) else 0.0
        flat = int(np.flatnonzero(ll.ravel() >= top - tol)[0])
        i, j = divmod(flat, ng)
        return LikelihoodSurface(self.grid.f_axis, self.grid.g_axis, ll, (float(self.grid.f_axis[i]), float(self.grid.g_axis[j])))


def mle_grid(dataset: OutcomeDataset, menu: ExperimentMenu, grid: GridSpec | None = None,
             template: ModelParams | None = None, table: GridLogProb | None = None) -> LikelihoodSurface:
    """Log-likelihood on a dense (F, G) grid and its first maximum."""
    _check_ids(dataset, menu)
    template = template or ModelParams(1.0, 1.0)
    if table is None:
        grid = grid or default_grid(menu.times[dataset.ids] if len(dataset) else [1.0])
        table = GridLogProb(menu, dataset.ids, grid, template)
    return table.surface(dataset)


def mle_refine(dataset: OutcomeDataset, menu: ExperimentMenu, start, template: ModelParams | None = None,
               step=0.01, xatol: float = 1e-6, max_iter: int = 500) -> ModelParams:
    """Nelder-Mead ascent of the log-likelihood from ``start`` (free-parameter values)."""
    _check_ids(dataset, menu)
    template = template or ModelParams(1.0, 1.0)
    x0 = np.asarray(start.free_values() if isinstance(start, ModelParams) else start, dtype=float).ravel()
    if x0.size != template.n_free:
        raise ContractError(f"start needs {template.n_free} values")
    ids, counts = dataset.ids, dataset.counts
    rho, povm, times = experiment_arrays(menu, ids)
    kind = _kind(template)

    def nll(x):
        p = template.with_free(x)
        probs = _kernels.experiment_probs(p.F, p.G, p.delta_omega, kind, FLIPFLOP_SIGN, times, rho, povm)
        ll = _loglik_from_probs(counts, probs)
        return -ll if np.isfinite(ll) else np.inf

    f0 = nll(x0)
    if not np.isfinite(f0):
        raise InvalidStartError("log-likelihood is not finite at the refinement start")
    steps = np.broadcast_to(np.asarray(step, dtype=float), x0.shape)
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    res = minimize(nll, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": xatol, "fatol": np.inf, "maxiter": max_iter})
    best = res.x if res.fun <= f0 else x0
    return template.with_free(best)


def estimate(dataset: OutcomeDataset, menu: ExperimentMenu, grid: GridSpec | None = None,
             template: ModelParams | None = None, table: GridLogProb | None = None) -> tuple[ModelParams, LikelihoodSurface]:
    """Grid argmax followed by local refinement."""
    surf = mle_grid(dataset, menu, grid, template, table)
    g = table.grid if table is not None else (grid or default_grid(menu.times[dataset.ids]))
    step = min(g.step)
    return mle_refine(dataset, menu, surf.argmax, template, step=step), surf


# -- adaptive procedure --------------------------------------------------------------


@dataclass
class AdaptiveRound:
    round: int
    guess: ModelParams
    design: DesignResult
    dataset: OutcomeDataset
    estimate: ModelParams


def round_seed(seed: int, k: int) -> int:
    """Independent dataset seed for round (or trial) ``k``."""
    return int(np.random.SeedSequence([_check_seed(seed), k]).generate_state(1, np.uint64)[0])


def adaptive_loop(menu: ExperimentMenu, theta_guess: ModelParams, truth: ModelParams, rounds: int,
                  n_per_round: int, seed: int, opts: DesignOptions | None = None,
                  grid: GridSpec | None = None) -> list[AdaptiveRound]:
    """Guess, design, sample, estimate, repeat; data from all rounds so far is pooled."""
    if rounds < 1:
        raise ContractError("rounds must be at least 1")
    guess = theta_guess
    pooled = None
    trace = []
    for r in range(1, rounds + 1):
        design = optimize_a_design(menu_fisher(menu, guess), opts)
        ds = sample_dataset(menu, design.weights, truth, n_per_round, round_seed(seed, r))
        pooled = ds if pooled is None else pooled.pooled(ds)
        est, _ = estimate(pooled, menu, grid, template=guess)
        trace.append(AdaptiveRound(r, guess, design, ds, est))
        guess = est
    return trace


# -- mean squared error vs N ---------------------------------------------------------


@dataclass
class MseTable:
    n: np.ndarray
    mse_mean: np.ndarray
    mse_median: np.ndarray
    var_sum: np.ndarray  # Var F + Var G across trials
    reference: np.ndarray  # Tr(I^-1) / N at the guess
    estimates: np.ndarray = field(repr=False)  # (len(n), trials, p)

    def write_csv(self, path, header_comments=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "mse_optimal", "mse_reference", "mse_median", "var_sum"])
            for row in zip(self.n, self.mse_mean, self.reference, self.mse_median, self.var_sum):
                w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def mse_curve(menu: ExperimentMenu, weights, truth: ModelParams, theta_guess: ModelParams, n_list, trials: int,
              seed: int, grid: GridSpec | None = None) -> MseTable:
    """Monte-Carlo squared error of the grid+refine MLE for each N."""
    if trials < 10:
        raise ContractError("at least 10 trials are needed")
    w = _weights_array(weights)
    ids = np.flatnonzero(w > 0)
    grid = grid or default_grid(menu.times[ids])
    table = GridLogProb(menu, ids, grid, theta_guess)
    stack = menu_fisher(menu.subset(ids), theta_guess)
    info = FisherMatrix(np.tensordot(w[ids] / w[ids].sum(), stack.m, axes=1), theta_guess)
    n_list = np.asarray(n_list, dtype=int)
    truth_vec = truth.free_values()
    est = np.empty((n_list.size, trials, theta_guess.n_free))
    for a, n in enumerate(n_list):
        for k in range(trials):
            ds = sample_dataset(menu, w, truth, int(n), round_seed(seed, int(n) * 1_000_003 + k))
            th, _ = estimate(ds, menu, template=theta_guess, table=table)
            est[a, k] = th.free_values()
    sq = np.sum((est - truth_vec) ** 2, axis=2)
    return MseTable(
        n=n_list,
        mse_mean=sq.mean(axis=1),
        mse_median=np.median(sq, axis=1),
        var_sum=np.var(est, axis=1, ddof=1).sum(axis=1),
        reference=np.array([cramer_rao_trace_bound(info, int(n)) for n in n_list]),
        estimates=est,
    )
