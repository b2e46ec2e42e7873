"""Inverse-Fisher landscapes over the (F, G) plane.

The estimability landscape re-optimizes the design at every grid point; the
robustness landscape keeps one design fixed and asks how its information
degrades away from the point it was designed for.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .design import DesignOptions, DesignWeights, optimize_a_design
from .errors import ContractError, EmptyLandscapeError, NotEstimableError, NumericalError
from .estimate import GridSpec
from .fisher import menu_fisher
from .linalg import inverse_small
from .menu import ExperimentMenu
from .model import ModelParams

OK, SINGULAR, NOT_CONVERGED = "ok", "singular", "not_converged"
DEFAULT_SWEEP_GRID = GridSpec(0.25, 2.0, 36, 0.25, 2.0, 36)
SWEEP_MAX_ITERS = 500


@dataclass(frozen=True)
class LandscapeGrid:
    f_axis: np.ndarray
    g_axis: np.ndarray
    inv11: np.ndarray  # (nf, ng)
    inv22: np.ndarray
    flags: np.ndarray  # (nf, ng) of OK / SINGULAR / NOT_CONVERGED

    @property
    def ok(self) -> np.ndarray:
        return self.flags == OK

    def write_csv(self, path, header_comments=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["f", "g", "inv11", "inv22", "flag"])
            for i, f in enumerate(self.f_axis):
                for j, g in enumerate(self.g_axis):
                    w.writerow([repr(float(f)), repr(float(g)), repr(float(self.inv11[i, j])),
                                repr(float(self.inv22[i, j])), self.flags[i, j]])


def _cells(grid: GridSpec):
    return [(i, j, f, g) for i, f in enumerate(grid.f_axis) for j, g in enumerate(grid.g_axis)]


def _assemble(grid: GridSpec, results) -> LandscapeGrid:
    inv11 = np.full((grid.nf, grid.ng), np.nan)
    inv22 = np.full((grid.nf, grid.ng), np.nan)
    flags = np.empty((grid.nf, grid.ng), dtype=object)
    for (i, j, _, _), (a, b, flag) in results:
        inv11[i, j], inv22[i, j], flags[i, j] = a, b, flag
    return LandscapeGrid(grid.f_axis, grid.g_axis, inv11, inv22, flags.astype(str))


def _map(fn, cells, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(zip(cells, pool.map(fn, cells)))
    return [(c, fn(c)) for c in cells]


def _diagonals(m: np.ndarray):
    inv = inverse_small(m)
    if inv[0, 0] <= 0 or inv[1, 1] <= 0:
        raise NotEstimableError("inverse Fisher matrix has a non-positive diagonal")
    return float(inv[0, 0]), float(inv[1, 1])


def estimability_landscape(menu: ExperimentMenu, grid: GridSpec | None = None, opts: DesignOptions | None = None,
                           template: ModelParams | None = None, threads: int = 1) -> LandscapeGrid:
    """Diagonals of the optimal design's inverse Fisher matrix at every grid point."""
    grid = grid or DEFAULT_SWEEP_GRID
    opts = opts or DesignOptions(max_iters=SWEEP_MAX_ITERS)
    template = template or ModelParams(1.0, 1.0)
    _check_template(template)

    def cell(c):
        _, _, f, g = c
        try:
            res = optimize_a_design(menu_fisher(menu, replace(template, F=float(f), G=float(g))), opts)
            a, b = _diagonals(res.fisher.m)
        except (NotEstimableError, NumericalError):
            return np.nan, np.nan, SINGULAR
        return a, b, OK if res.converged else NOT_CONVERGED

    return _assemble(grid, _map(cell, _cells(grid), threads))


def robustness_landscape(menu: ExperimentMenu, fixed_weights, grid: GridSpec | None = None,
                         template: ModelParams | None = None, threads: int = 1) -> LandscapeGrid:
    """Diagonals of a fixed design's inverse Fisher matrix at every grid point."""
    grid = grid or DEFAULT_SWEEP_GRID
    template = template or ModelParams(1.0, 1.0)
    _check_template(template)
    w = fixed_weights.weights if isinstance(fixed_weights, DesignWeights) else np.asarray(fixed_weights, dtype=float)
    if w.shape != (len(menu),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ContractError("fixed weights must be a simplex vector over the menu")
    ids = np.flatnonzero(w > 0)
    sub = menu.subset(ids)
    ws = w[ids] / w[ids].sum()

    def cell(c):
        _, _, f, g = c
        try:
            stack = menu_fisher(sub, replace(template, F=float(f), G=float(g)))
            if np.any(stack.singular & (ws > 0)):
                raise NotEstimableError("singular outcome in the design")
            a, b = _diagonals(np.tensordot(ws, stack.m, axes=1))
        except (NotEstimableError, NumericalError):
            return np.nan, np.nan, SINGULAR
        return a, b, OK

    return _assemble(grid, _map(cell, _cells(grid), threads))


def _check_template(template: ModelParams) -> None:
    if tuple(template.free) != ("F", "G"):
        raise ContractError("landscapes are defined over free parameters (F, G)")


@dataclass(frozen=True)
class ChannelStats:
    mean: float
    min: float
    max: float

    @property
    def dispersion(self) -> float:
        """max / mean"""
        return self.max / self.mean


def landscape_stats(grid: LandscapeGrid) -> dict:
    """Mean, min and max of each channel over the ok cells."""
    ok = grid.ok
    if not ok.any():
        raise EmptyLandscapeError("no landscape cell succeeded")
    out = {}
    for name in ("inv11", "inv22"):
        v = getattr(grid, name)[ok]
        out[name] = ChannelStats(float(v.mean()), float(v.min()), float(v.max()))
    return out
