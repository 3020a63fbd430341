"""Monte Carlo cross-checks of the closed-form moment and covariance
formulas, used by the `validate` CLI command and the acceptance tests.

Each check simulates with Euler-Maruyama and compares the sample
estimate against the closed form within 3 standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import covariance, kernel, simulate
from .kernel import OUOUParams
from .tree import parse_newick

__all__ = ["CheckResult", "moment_checks", "trait_cov_checks", "validate_suite", "DEFAULT_TREE"]

# 5-tip ultrametric tree (depth 0.7) used by the covariance check
DEFAULT_TREE = "((A:0.4,B:0.4):0.3,(C:0.25,(D:0.1,E:0.1):0.15):0.45);"

# theta_a = b0 + b1*x_a = 1, y_a = 1: the canonical started-at-(1, 1) lineage
CANONICAL_PARAMS = OUOUParams(alpha=1.0, sigma_y=1.0, sigma_x=1.0, b0=0.0, b1=1.0, x_a=1.0, y_a=1.0)

TREE_PARAMS = OUOUParams(alpha=1.0, sigma_y=1.0, sigma_x=1.0, b0=0.0, b1=1.0, x_a=0.0, y_a=0.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    expected: float
    observed: float
    se: float
    passed: bool

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: expected={self.expected:.6g} "
            f"observed={self.observed:.6g} se={self.se:.3g}"
        )


def _check(name: str, expected: float, estimate: simulate.MomentEstimate) -> CheckResult:
    tol = 3.0 * estimate.se + 1e-12
    return CheckResult(
        name=name,
        expected=float(expected),
        observed=estimate.value,
        se=estimate.se,
        passed=abs(estimate.value - float(expected)) <= tol,
    )


def moment_checks(
    params: OUOUParams,
    times,
    paths: int,
    seed: int = 0,
    steps_per_horizon: int = 1000,
) -> list[CheckResult]:
    """Compare every closed-form lineage moment against Monte Carlo at
    each horizon in `times` (step h = t / steps_per_horizon)."""
    results: list[CheckResult] = []
    for k, t in enumerate(times):
        mc = simulate.mc_moments(params, t, paths, h=t / steps_per_horizon, seed=seed + k)
        th_mean, th_m2 = kernel.theta_moments(params, t)
        y_mean, y_m2 = kernel.y_moments(params, t)
        cross = kernel.cross_moment_y_theta(params, t)
        var_th, cov_yt, var_y = kernel.var_cov(params, t)
        expectations = {
            "theta_mean": th_mean,
            "theta_second_moment": th_m2,
            "y_mean": y_mean,
            "y_second_moment": y_m2,
            "cross_moment": cross,
            "var_theta": var_th,
            "cov_y_theta": cov_yt,
            "var_y": var_y,
        }
        for name, expected in expectations.items():
            results.append(_check(f"{name} @ t={t:g}", expected, mc[name]))
    return results


def trait_cov_checks(
    newick: str,
    params: OUOUParams,
    paths: int,
    seed: int = 0,
    step: float | None = None,
) -> list[CheckResult]:
    """Compare the closed-form tip-trait covariance matrix entrywise
    against the sample covariance of simulated tip traits."""
    tree = parse_newick(newick)
    expected = covariance.trait_cov(tree, params)
    out = simulate.simulate_tree(
        simulate.SimConfig(params=params, tree=tree, step=step, paths=paths, seed=seed)
    )
    y = out.y  # (n, paths)
    centered = y - y.mean(axis=1, keepdims=True)
    labels = tree.tip_labels
    results: list[CheckResult] = []
    n = len(labels)
    for i in range(n):
        for j in range(i, n):
            products = centered[i] * centered[j]
            est = simulate.MomentEstimate(
                float(products.mean()),
                float(products.std(ddof=1) / np.sqrt(paths)),
            )
            results.append(
                _check(f"tip_cov ({labels[i]},{labels[j]})", expected[i, j], est)
            )
    return results


def validate_suite(paths: int = 200_000, seed: int = 0, step: float | None = None) -> list[CheckResult]:
    """The full diagnostic battery: lineage moments at several horizons
    plus the tree covariance check on the built-in 5-tip tree."""
    results = moment_checks(CANONICAL_PARAMS, times=(0.5, 1.0, 2.0), paths=paths, seed=seed)
    results += trait_cov_checks(DEFAULT_TREE, TREE_PARAMS, paths=paths, seed=seed + 1000, step=step)
    return results
