"""Federated simple bilevel optimization via single-timescale regularization.

Solves min f(x) subject to x in argmin h, where both levels are client
averages, by running standard federated methods (FedAvg, SCAFFOLD) on the
regularized objective h + eta*f. Includes centralized accelerated
baselines, a two-loop scheme for nonconvex outer objectives, proximal /
Moreau-envelope tooling, ground-truth oracles for synthetic instances,
and a deterministic experiment runner.
"""

from .centralized import (
    run_agm_convex,
    run_agm_strongly_convex,
    run_gd,
    measure_err_eta,
    solve_reg_problem,
)
from .estimators import CentralizedSolver, FederatedSolver, TwoLoopSolver
from .fedsim import (
    DivergenceError,
    RunResult,
    run_training,
    sample_clients,
)
from .nonconvex import OuterConfig, inner_projection, outer_step, run_two_loop
from .oracles import affine_projection, bilevel_reference, metrics, min_l1_reference
from .problems import (
    GroundTruth,
    LocalObjective,
    ProblemInstance,
    Sharpness,
    dirichlet_partition,
    make_overparam_ls,
    make_weak_sharp_instance,
    squared_distance_objective,
)
from .prox import lsp_value, moreau_l1, moreau_lsp, prox_lsp, soft_threshold
from .regularize import (
    BoundReport,
    RegularizedObjective,
    Schedule,
    TheoremBoundInputs,
    WeightedAverage,
    bgd_regularized,
    compose,
    make_schedule,
    theorem1_bounds,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "CentralizedSolver",
    "DivergenceError",
    "FederatedSolver",
    "GroundTruth",
    "LocalObjective",
    "OuterConfig",
    "ProblemInstance",
    "RegularizedObjective",
    "RunResult",
    "Schedule",
    "Sharpness",
    "TheoremBoundInputs",
    "TwoLoopSolver",
    "WeightedAverage",
    "affine_projection",
    "bgd_regularized",
    "bilevel_reference",
    "compose",
    "dirichlet_partition",
    "inner_projection",
    "lsp_value",
    "make_overparam_ls",
    "make_schedule",
    "make_weak_sharp_instance",
    "measure_err_eta",
    "metrics",
    "min_l1_reference",
    "moreau_l1",
    "moreau_lsp",
    "outer_step",
    "prox_lsp",
    "run_agm_convex",
    "run_agm_strongly_convex",
    "run_gd",
    "run_training",
    "run_two_loop",
    "sample_clients",
    "soft_threshold",
    "solve_reg_problem",
    "squared_distance_objective",
    "theorem1_bounds",
]
