"""Command-line front end.

Every subcommand reads one resolved configuration (JSON file overlaid by
flags) and writes its outputs into ``--out``.  Outputs carry the package
version and a hash of the configuration; nothing time-dependent is written.

Exit codes: 0 ok, 2 usage or missing input, 3 numerical failure,
4 certificate failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .design import (DesignOptions, design_to_json, equivalence_gap, load_design_weights, optimize_a_design,
                     schur_certificate)
from .errors import ContractError, NumericalError, QoedError
from .estimate import (GridSpec, OutcomeDataset, adaptive_loop, default_grid, estimate, log_likelihood,
                       mse_curve, sample_dataset)
from .fisher import menu_fisher, write_fisher_csv, write_fisher_json
from .linalg import inverse_small
from .menu import MENU_NAMES, ExperimentMenu, apply_gate_error, menu_by_name
from .model import ModelParams
from .sweep import DEFAULT_SWEEP_GRID, estimability_landscape, landscape_stats, robustness_landscape

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CERT = 0, 2, 3, 4

DEFAULTS = {
    "theta_guess": [1.0, 1.0],
    "truth": [1.1, 0.9],
    "delta_omega": 1.0,
    "times": [1.0],
    "menu_source": "full",
    "n_samples": 200,
    "seed": 1,
    "grid_spec": None,
    "threads": 1,
    "output_dir": ".",
    "gate_error_prep": 0.0,
    "gate_error_meas": 0.0,
    "rounds": 3,
    "trials": 100,
    "n_list": [50, 100, 200, 400, 800],
    "design": None,
    "dataset": None,
    "max_iters": 5000,
}


@dataclass(frozen=True)
class RunConfig:
    theta_guess: tuple
    truth: tuple
    delta_omega: float
    times: tuple
    menu_source: str
    n_samples: int
    seed: int
    grid_spec: str | None
    threads: int
    output_dir: str
    gate_error_prep: float
    gate_error_meas: float
    rounds: int
    trials: int
    n_list: tuple
    design: str | None
    dataset: str | None
    max_iters: int

    def __post_init__(self):
        nums = [*self.theta_guess, *self.truth, self.delta_omega, *self.times, self.gate_error_prep,
                self.gate_error_meas]
        if not all(np.isfinite(v) for v in nums):
            raise ContractError("numeric configuration fields must be finite")
        if not self.times:
            raise ContractError("times must be non-empty")
        if len(self.theta_guess) != 2 or len(self.truth) != 2:
            raise ContractError("theta values are pairs F,G")
        if self.n_samples < 1 or self.rounds < 1 or self.threads < 1 or self.max_iters < 1:
            raise ContractError("counts must be positive")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")
        if self.menu_source not in MENU_NAMES and not Path(self.menu_source).is_file():
            raise ContractError(f"menu source {self.menu_source!r} is neither a built-in menu nor a file")
        for name in ("design", "dataset"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ContractError(f"{name} file {path} does not exist")

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @property
    def hash(self) -> str:
        payload = self.as_dict()
        payload.pop("output_dir")
        payload.pop("threads")  # results do not depend on the thread count
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def params(self, which="theta_guess") -> ModelParams:
        f, g = getattr(self, which)
        return ModelParams(float(f), float(g), self.delta_omega)

    @property
    def grid(self) -> GridSpec | None:
        return GridSpec.parse(self.grid_spec) if self.grid_spec else None

    def meta(self) -> dict:
        return {"version": __version__, "config_hash": self.hash}

    def comments(self) -> list[str]:
        return [f"version={__version__}", f"config_hash={self.hash}"]


def _pair(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected F,G but got {text!r}") from exc
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected F,G but got {text!r}")
    return vals


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _threads(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--theta-guess", type=_pair, help="F,G at which designs are computed")
    common.add_argument("--truth", type=_pair, help="F,G used to simulate data")
    common.add_argument("--delta-omega", type=float)
    common.add_argument("--times", type=_floats, help="probe times a,b,c")
    common.add_argument("--menu-source", help="full | suboptimal | optimal-pair | path to a menu file")
    common.add_argument("--n", dest="n_samples", type=int, help="number of runs")
    common.add_argument("--seed", type=int)
    common.add_argument("--grid", dest="grid_spec", help="fmin:fmax:nf,gmin:gmax:ng")
    common.add_argument("--threads", type=_threads, help="worker threads or 'auto'")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--gate-error-prep", type=float)
    common.add_argument("--gate-error-meas", type=float)
    common.add_argument("--rounds", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--n-list", type=_ints)
    common.add_argument("--design", help="design file (default: OUT/design.json)")
    common.add_argument("--dataset", help="dataset file (default: OUT/dataset.json)")
    common.add_argument("--max-iters", type=int)

    parser = argparse.ArgumentParser(prog="qoed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("menu", "write the experiment menu"),
        ("fisher", "per-experiment Fisher matrices at the guess"),
        ("design", "A-optimal design at the guess"),
        ("simulate", "sample a dataset from a design"),
        ("estimate", "maximum-likelihood estimate from a dataset"),
        ("adapt", "iterate design, simulation and estimation"),
        ("sweep-estimability", "optimal inverse-Fisher diagonals over a grid"),
        ("sweep-robustness", "a fixed design's inverse-Fisher diagonals over a grid"),
        ("certify", "check a design file's optimality certificates"),
        ("mse-curve", "Monte-Carlo MSE of the MLE against N"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ContractError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    try:
        return RunConfig(
            theta_guess=tuple(float(x) for x in values["theta_guess"]),
            truth=tuple(float(x) for x in values["truth"]),
            delta_omega=float(values["delta_omega"]),
            times=tuple(float(x) for x in values["times"]),
            menu_source=str(values["menu_source"]),
            n_samples=int(values["n_samples"]),
            seed=int(values["seed"]),
            grid_spec=values["grid_spec"],
            threads=int(values["threads"]),
            output_dir=str(values["output_dir"]),
            gate_error_prep=float(values["gate_error_prep"]),
            gate_error_meas=float(values["gate_error_meas"]),
            rounds=int(values["rounds"]),
            trials=int(values["trials"]),
            n_list=tuple(int(x) for x in values["n_list"]),
            design=values["design"],
            dataset=values["dataset"],
            max_iters=int(values["max_iters"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"bad configuration value: {exc}") from exc


# -- helpers -------------------------------------------------------------------------


def load_menu(cfg: RunConfig) -> ExperimentMenu:
    if cfg.menu_source in MENU_NAMES:
        menu = menu_by_name(cfg.menu_source, cfg.times)
        if cfg.menu_source != "full" and list(cfg.times) != [1.0]:
            menu = menu.with_times(cfg.times)
    else:
        menu = ExperimentMenu.load(cfg.menu_source)
    if cfg.gate_error_prep or cfg.gate_error_meas:
        menu = apply_gate_error(menu, cfg.gate_error_prep, cfg.gate_error_meas)
    return menu


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _input(cfg: RunConfig, name: str, default: str) -> Path:
    path = Path(getattr(cfg, name) or cfg.out / default)
    if not path.is_file():
        raise ContractError(f"missing input {path}; run the upstream command first or pass --{name}")
    return path


def _design_weights(cfg: RunConfig, menu: ExperimentMenu):
    doc = json.loads(_input(cfg, "design", "design.json").read_text())
    if doc.get("n") not in (None, len(menu)):
        raise ContractError(f"design was made for a menu of {doc['n']} experiments, not {len(menu)}")
    return load_design_weights(doc, len(menu)), doc


def _opts(cfg: RunConfig) -> DesignOptions:
    return DesignOptions(max_iters=cfg.max_iters)


def _theta_doc(p: ModelParams) -> dict:
    return {"F": p.F, "G": p.G, "delta_omega": p.delta_omega}


# -- commands ------------------------------------------------------------------------


def cmd_menu(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    menu.save(cfg.out / "menu.json", {"meta": cfg.meta()})
    print(len(menu))
    return EXIT_OK


def cmd_fisher(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    stack = menu_fisher(menu, cfg.params())
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_fisher_csv(cfg.out / "fisher.csv", stack, cfg.comments())
    print(f"{len(stack)} Fisher matrices, {int(stack.singular.sum())} flagged singular")
    return EXIT_OK


def cmd_design(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    if len(menu) == 0:
        raise ContractError("menu is empty")
    result = optimize_a_design(menu_fisher(menu, cfg.params()), _opts(cfg))
    _write_json(cfg.out / "design.json", design_to_json(result, {"meta": cfg.meta(), "menu_source": cfg.menu_source}))
    print(f"objective {result.objective:.10g}")
    print(f"gap {result.equivalence_gap:.3e} converged {result.converged} iterations {result.iterations}")
    for c in result.merged_support:
        print(f"support weight {c.weight:.6f} ids {','.join(str(i) for i in c.ids)}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    weights, _ = _design_weights(cfg, menu)
    ds = sample_dataset(menu, weights, cfg.params("truth"), cfg.n_samples, cfg.seed)
    _write_json(cfg.out / "dataset.json", ds.to_json({"meta": cfg.meta()}))
    print(f"{ds.total_n} runs over {len(ds)} experiments")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    ds = OutcomeDataset.load(_input(cfg, "dataset", "dataset.json"))
    if len(ds) == 0:
        raise ContractError("dataset is empty")
    template = cfg.params()
    grid = cfg.grid or default_grid(menu.times[ds.ids])
    est, surf = estimate(ds, menu, grid, template)
    surf.write_csv(cfg.out / "surface.csv", cfg.comments())
    _write_json(cfg.out / "estimate.json", {
        "meta": cfg.meta(),
        "grid": grid.to_text(),
        "grid_argmax": list(surf.argmax),
        "estimate": _theta_doc(est),
        "loglik": log_likelihood(ds, menu, est),
    })
    print(f"F {est.F:.6f} G {est.G:.6f}")
    return EXIT_OK


def cmd_adapt(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    trace = adaptive_loop(menu, cfg.params(), cfg.params("truth"), cfg.rounds, cfg.n_samples, cfg.seed,
                          _opts(cfg), cfg.grid)
    rounds = []
    for r in trace:
        rounds.append({
            "round": r.round,
            "guess": _theta_doc(r.guess),
            "objective": r.design.objective,
            "support": [{"id": int(i), "weight": float(r.design.weights.weights[i])} for i in r.design.weights.support],
            "estimate": _theta_doc(r.estimate),
        })
        print(f"round {r.round}: F {r.estimate.F:.6f} G {r.estimate.G:.6f}")
    _write_json(cfg.out / "adapt.json", {"meta": cfg.meta(), "rounds": rounds})
    return EXIT_OK


def _report_landscape(grid, path: Path, cfg: RunConfig) -> None:
    grid.write_csv(path, cfg.comments())
    flags, counts = np.unique(grid.flags, return_counts=True)
    print(" ".join(f"{f}={c}" for f, c in zip(flags, counts)))
    for name, st in landscape_stats(grid).items():
        print(f"{name} mean {st.mean:.4g} min {st.min:.4g} max {st.max:.4g}")


def cmd_sweep_estimability(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    grid = estimability_landscape(menu, cfg.grid or DEFAULT_SWEEP_GRID,
                                  DesignOptions(max_iters=min(cfg.max_iters, 500)), cfg.params(), cfg.threads)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _report_landscape(grid, cfg.out / "estimability.csv", cfg)
    return EXIT_OK


def cmd_sweep_robustness(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    weights, _ = _design_weights(cfg, menu)
    grid = robustness_landscape(menu, weights, cfg.grid or DEFAULT_SWEEP_GRID, cfg.params(), cfg.threads)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _report_landscape(grid, cfg.out / "robustness.csv", cfg)
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    weights, doc = _design_weights(cfg, menu)
    theta = doc.get("theta_at") or {}
    params = ModelParams(theta.get("F", cfg.theta_guess[0]), theta.get("G", cfg.theta_guess[1]),
                         theta.get("delta_omega", cfg.delta_omega))
    stack = menu_fisher(menu, params)
    f = stack.combined(weights.weights).m
    q = inverse_small(f)
    objective = float(np.trace(q))
    gap = equivalence_gap(stack, weights)
    opts = doc.get("options", {})
    gap_tol = opts.get("gap_tol") or opts.get("rel_gap_tol", 1e-5) * objective
    schur = schur_certificate(q, f)
    ok = schur and gap <= gap_tol
    print(f"schur {'PASS' if schur else 'FAIL'}")
    print(f"gap {gap:.3e} tol {gap_tol:.3e} {'PASS' if gap <= gap_tol else 'FAIL'}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CERT


def cmd_mse_curve(cfg: RunConfig) -> int:
    menu = load_menu(cfg)
    weights, _ = _design_weights(cfg, menu)
    table = mse_curve(menu, weights, cfg.params("truth"), cfg.params(), cfg.n_list, cfg.trials, cfg.seed, cfg.grid)
    cfg.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(cfg.out / "mse.csv", cfg.comments())
    for n, mse, ref in zip(table.n, table.mse_mean, table.reference):
        print(f"N {n}: mse {mse:.4g} bound {ref:.4g}")
    return EXIT_OK


COMMANDS = {
    "menu": cmd_menu,
    "fisher": cmd_fisher,
    "design": cmd_design,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "adapt": cmd_adapt,
    "sweep-estimability": cmd_sweep_estimability,
    "sweep-robustness": cmd_sweep_robustness,
    "certify": cmd_certify,
    "mse-curve": cmd_mse_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QoedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
