"""A-optimal experiment design for Hamiltonian parameter estimation on two coupled qubits."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .design import (DesignOptions, DesignResult, DesignWeights, brute_force_design, equivalence_gap,
                     optimize_a_design, schur_certificate)
from .errors import (ContractError, NotEstimableError, NumericalError, QoedError, SingularMatrixError)
from .estimate import (GridSpec, OutcomeDataset, adaptive_loop, allocate_runs, log_likelihood, mle_grid,
                       mle_refine, mse_curve, sample_dataset)
from .fisher import (FisherMatrix, combined_fisher, cramer_rao_trace_bound, experiment_fisher, menu_fisher,
                     outcome_grads, outcome_probs)
from .menu import (OPTIMAL_PAIR_WEIGHTS, BlochVector, Experiment, ExperimentMenu, apply_gate_error,
                   build_full_menu, optimal_pair_menu, suboptimal_menu)
from .model import ModelParams, unitary, unitary_closed, unitary_numeric, unitary_rwa
from .sweep import estimability_landscape, landscape_stats, robustness_landscape
