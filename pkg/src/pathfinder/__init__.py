"""Approximate sampling from differentiable log densities.

Fits low-rank-plus-diagonal normal approximations along quasi-Newton
optimization paths, selects the ELBO-maximizing approximation, and optionally
pools several independent paths with Pareto-smoothed importance resampling.
"""

from .elbo import ElboEstimate, elbo_estimate
from .errors import (
    AllFailedError,
    AllPathsFailedError,
    BadParamsError,
    CholeskyFailError,
    ConfigError,
    DimensionMismatchError,
    LineSearchFailError,
    NoFiniteWeightsError,
    NonFiniteError,
    PathfinderError,
    SingularEError,
    SizeLimitError,
    UnknownTargetError,
)
from .evaluate import wasserstein1
from .inv_hessian import AlphaRecovery, CompactFactors, alpha_recover, assemble_factors
from .lbfgs import LbfgsOptions, Termination, Trajectory, optimize
from .multipath import (
    MultipathOptions,
    MultipathResult,
    WeightedSample,
    fit_generalized_pareto,
    pool_runs,
    psis_smooth,
    resample,
    run_multi,
)
from .normal_approx import DrawBatch, FactoredNormal, build, eval_logq, sample
from .single_path import PathfinderOptions, PathfinderRun, run_single, select_argmax
from .targets import LogDensityTarget, make_target

__version__ = "0.1.0"

__all__ = [
    "AllFailedError",
    "AllPathsFailedError",
    "AlphaRecovery",
    "BadParamsError",
    "CholeskyFailError",
    "CompactFactors",
    "ConfigError",
    "DimensionMismatchError",
    "DrawBatch",
    "ElboEstimate",
    "FactoredNormal",
    "LbfgsOptions",
    "LineSearchFailError",
    "LogDensityTarget",
    "MultipathOptions",
    "MultipathResult",
    "NoFiniteWeightsError",
    "NonFiniteError",
    "PathfinderError",
    "PathfinderOptions",
    "PathfinderRun",
    "SingularEError",
    "SizeLimitError",
    "Termination",
    "Trajectory",
    "UnknownTargetError",
    "WeightedSample",
    "alpha_recover",
    "assemble_factors",
    "build",
    "elbo_estimate",
    "eval_logq",
    "fit_generalized_pareto",
    "make_target",
    "optimize",
    "pool_runs",
    "psis_smooth",
    "resample",
    "run_multi",
    "run_single",
    "sample",
    "select_argmax",
    "wasserstein1",
]
