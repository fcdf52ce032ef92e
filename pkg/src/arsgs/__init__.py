"""Adaptive random scan Gibbs sampling with pseudo-spectral-gap weight learning."""

__version__ = "0.1.0"

from .blockmodel import BlockPartition, CovarianceEstimate, WeightVector
from .gapcore import GapProblem, closed_form_pairs, gaussian_gap, pseudo_gap, pseudo_optimal_exact
from .adapt import AdaptationState, Schedule, StepRule, adapt_epoch, project_simplex_eps
from .samplers import RunConfig, run
from .targets import GaussianTarget, MsmTarget, TmvnTarget, make_example1, make_example2

__all__ = [
    "BlockPartition",
    "CovarianceEstimate",
    "WeightVector",
    "GapProblem",
    "closed_form_pairs",
    "gaussian_gap",
    "pseudo_gap",
    "pseudo_optimal_exact",
    "AdaptationState",
    "Schedule",
    "StepRule",
    "adapt_epoch",
    "project_simplex_eps",
    "RunConfig",
    "run",
    "GaussianTarget",
    "MsmTarget",
    "TmvnTarget",
    "make_example1",
    "make_example2",
]
