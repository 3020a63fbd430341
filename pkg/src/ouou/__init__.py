"""Evolutionary regression under coupled trait/predictor OU dynamics.

A library and CLI for fitting the regression of a trait on a predictor
across related species, where the trait adapts toward an optimum that
is a linear function of an OU-evolving predictor, plus the simulation
machinery that verifies every closed form by Monte Carlo.
"""

from .covariance import (
    CovarianceBundle,
    NotPositiveDefiniteError,
    covariance_bundle,
    predictor_cov,
    residual_cov,
    trait_cov,
)
from .fitting import (
    ComparisonRow,
    FitConfig,
    FitReport,
    ModelHook,
    TraitTable,
    aicc,
    compare_models,
    default_hooks,
    fit_ouou,
    gls_solve,
    log_likelihood,
    r_squared,
    x_mle,
)
from .kernel import (
    OUOUParams,
    cross_moment_y_theta,
    evolutionary_regression,
    intercept_q,
    regression_on_optimum,
    slope_factor_p,
    theta_moments,
    var_cov,
    y_moments,
)
from .optimize import BoxDomain, OptimResult, line_minimize, minimize_powell
from .simulate import MomentEstimate, SimConfig, SimOutput, mc_moments, simulate_tree, step_pair
from .tree import (
    NewickError,
    NotUltrametricError,
    PairTimes,
    PhyloTree,
    normalize_tip_depths,
    parse_newick,
    serialize_newick,
    validate_ultrametric,
)

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "ComparisonRow",
    "CovarianceBundle",
    "FitConfig",
    "FitReport",
    "ModelHook",
    "MomentEstimate",
    "NewickError",
    "NotPositiveDefiniteError",
    "NotUltrametricError",
    "OptimResult",
    "OUOUParams",
    "PairTimes",
    "PhyloTree",
    "SimConfig",
    "SimOutput",
    "TraitTable",
    "aicc",
    "compare_models",
    "covariance_bundle",
    "cross_moment_y_theta",
    "default_hooks",
    "evolutionary_regression",
    "fit_ouou",
    "gls_solve",
    "intercept_q",
    "line_minimize",
    "log_likelihood",
    "mc_moments",
    "minimize_powell",
    "normalize_tip_depths",
    "parse_newick",
    "predictor_cov",
    "r_squared",
    "regression_on_optimum",
    "residual_cov",
    "serialize_newick",
    "simulate_tree",
    "slope_factor_p",
    "step_pair",
    "theta_moments",
    "trait_cov",
    "validate_ultrametric",
    "var_cov",
    "x_mle",
]
