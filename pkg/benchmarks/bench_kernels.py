"""Compare the compiled and numpy kernels on the two hot paths.

    python benchmarks/bench_kernels.py [--repeat 5]

Likelihood evaluation during refinement calls ``experiment_probs`` on a
handful of experiments many times; the MLE grid calls ``grid_probs`` once
per dataset layout.
"""
import argparse
import timeit

import numpy as np

from qoed import _kernels
from qoed.design import optimize_a_design
from qoed.fisher import experiment_arrays, menu_fisher
from qoed.menu import build_full_menu
from qoed.model import FLIPFLOP_SIGN, ModelParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    theta = ModelParams(1.0, 1.0)
    menu = build_full_menu()
    design = optimize_a_design(menu_fisher(menu, theta))
    ids = design.weights.support
    rho, povm, times = experiment_arrays(menu, ids)
    f_axis = np.linspace(0, 3, 301)
    g_axis = np.linspace(0, np.pi, 301)
    print(f"{len(ids)} support experiments; backends: {', '.join(_kernels.backends())}")

    ref = None
    for name, mod in _kernels.backends().items():
        def probs():
            for k in range(1000):
                mod.experiment_probs(1.0 + 1e-4 * k, 1.0, 1.0, _kernels.RWA, FLIPFLOP_SIGN, times, rho, povm)

        def grid():
            return mod.grid_probs(f_axis, g_axis, 1.0, _kernels.RWA, FLIPFLOP_SIGN, times, rho, povm)

        t_probs = min(timeit.repeat(probs, number=1, repeat=args.repeat))
        t_grid = min(timeit.repeat(grid, number=1, repeat=args.repeat))
        out = grid()
        diff = 0.0 if ref is None else float(np.max(np.abs(out - ref)))
        ref = out if ref is None else ref
        print(f"{name:7s} 1000 likelihood calls {t_probs * 1e3:8.2f} ms   301x301 grid {t_grid * 1e3:8.2f} ms"
              f"   max diff {diff:.1e}")


if __name__ == "__main__":
    main()
