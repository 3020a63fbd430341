"""Dense n x n covariance matrices over the tips of an ultrametric tree.

Three matrices feed the estimation stage:

* the predictor covariance under its OU dynamics (T_alpha),
* the trait covariance, built from the moments of the shared-ancestor
  state at each pair's split time, and
* the residual covariance V of the trait-on-optimum regression, which
  is the trait covariance minus the parts explained by the optimum.

n stays small (tens to hundreds of species), so everything is dense.
All kernels are evaluated once per distinct (shared time, divergence
time) pair class and scattered into the full matrix; the residual
covariance decomposes as

    V = sigma_y^2 * B(alpha) + sigma_theta^2 * C(alpha)

with B the unit-rate predictor covariance, which the fitting stage
exploits to cache the alpha-dependent parts across likelihood
evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import OUOUParams, slope_factor_p, var_cov
from .tree import PhyloTree, validate_ultrametric

__all__ = [
    "CovarianceBundle",
    "NotPositiveDefiniteError",
    "predictor_cov",
    "trait_cov",
    "residual_cov",
    "residual_components",
    "covariance_bundle",
    "cholesky_with_jitter",
]

# diagonal jitter ladder, as fractions of the mean diagonal
_JITTER_SCALES = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest allowed diagonal jitter."""


@dataclass(frozen=True)
class CovarianceBundle:
    """The three matrices for one (tree, params) pair, plus the jitter
    (trait^2 units) that was added to V's diagonal to make it positive
    definite (0.0 in the common case)."""

    t_alpha: np.ndarray
    trait_covariance: np.ndarray
    residual_covariance: np.ndarray
    jitter: float


def cholesky_with_jitter(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of `matrix`, escalating a diagonal jitter of
    1e-10..1e-6 times the mean diagonal until it succeeds.

    Returns (lower_factor, jitter_added).  Raises
    NotPositiveDefiniteError if the largest jitter still fails.
    """
    mean_diag = float(np.mean(np.diag(matrix)))
    for scale in _JITTER_SCALES:
        jitter = scale * mean_diag
        try:
            if scale == 0.0:
                chol = np.linalg.cholesky(matrix)
            else:
                chol = np.linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]))
            return chol, jitter
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(
        f"matrix is not positive definite even after jitter "
        f"{_JITTER_SCALES[-1]:g} * mean(diag) = {_JITTER_SCALES[-1] * mean_diag:g}"
    )


def _classes(tree: PhyloTree, rel_tol: float):
    validate_ultrametric(tree, rel_tol)
    return tree.pair_time_classes


def _component_classes(tree: PhyloTree, alpha: float, rel_tol: float):
    """Per-class values (b_u, c_u) of the decomposition
    V = sigma_y^2 * B + sigma_theta^2 * C:

        B = exp(-alpha*d) * vs(t_a)                       (unit predictor cov)
        C = exp(-alpha*d) * [ (alpha*d/2)^2 * vs + vs/2
                              - t_a*(1 + alpha*t_a)/2 * e2
                              + alpha*d * (vs/2 - t_a/2 * e2) ]
            + p(alpha*t_a) * t_a * e2

    with vs = (1 - e^{-2 alpha t_a})/(2 alpha), e2 = e^{-2 alpha t_a}.
    The last term is the residual correction: p*Var[theta] - 2p*Cov[y,theta]
    collapses to p * sigma_theta^2 * t_a * e2.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    ta_u, d_u, _ = _classes(tree, rel_tol)
    e2 = np.exp(-2.0 * alpha * ta_u)
    vs = -np.expm1(-2.0 * alpha * ta_u) / (2.0 * alpha)
    ed = np.exp(-alpha * d_u)
    b_u = ed * vs
    half = alpha * d_u / 2.0
    c_u = ed * (
        half * half * vs
        + vs / 2.0
        - ta_u * (1.0 + alpha * ta_u) / 2.0 * e2
        + alpha * d_u * (vs / 2.0 - ta_u / 2.0 * e2)
    ) + slope_factor_p(alpha * ta_u) * ta_u * e2
    return b_u, c_u


def residual_components(
    tree: PhyloTree, alpha: float, rel_tol: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Full matrices (B, C) of the decomposition V = sigma_y^2*B + sigma_theta^2*C."""
    b_u, c_u = _component_classes(tree, alpha, rel_tol)
    _, _, inverse = _classes(tree, rel_tol)
    return b_u[inverse], c_u[inverse]


def predictor_cov(
    tree: PhyloTree, alpha: float, sigma_x: float, rel_tol: float = 1e-6
) -> np.ndarray:
    """OU covariance of the predictor across tips:

        entry (i, j) = sigma_x^2 * exp(-alpha*d_ij) * (1 - exp(-2*alpha*t_a)) / (2*alpha)

    with d_ij the total divergence path and t_a the shared time.  At
    alpha -> 0 this tends to sigma_x^2 * t_a (the Brownian covariance).
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    ta_u, d_u, inverse = _classes(tree, rel_tol)
    vs = -np.expm1(-2.0 * alpha * ta_u) / (2.0 * alpha)
    values = sigma_x**2 * np.exp(-alpha * d_u) * vs
    return values[inverse]


def trait_cov(tree: PhyloTree, params: OUOUParams, rel_tol: float = 1e-6) -> np.ndarray:
    """Covariance of the trait across tips.

    A pair (i, j) splits at shared time t_a, after which each lineage's
    conditional mean is exp(-a*s)*y_anc + a*s*exp(-a*s)*theta_anc with
    s = d_ij/2.  The covariance is the variance of that linear
    combination of the ancestor state:

        exp(-a*d) * [ (a*d/2)^2 * Var[theta]  +  Var[y]
                      + a*d * Cov[y, theta] ]      (moments at t_a)

    The diagonal (d = 0, t_a = depth) reduces to Var[y] at the tree depth.
    """
    ta_u, d_u, inverse = _classes(tree, rel_tol)
    var_theta, cov_yt, var_y = var_cov(params, ta_u)
    a = params.alpha
    half = a * d_u / 2.0
    values = np.exp(-a * d_u) * (half * half * var_theta + var_y + a * d_u * cov_yt)
    return values[inverse]


def _residual_cov_raw(tree: PhyloTree, params: OUOUParams, rel_tol: float = 1e-6) -> np.ndarray:
    b, c = residual_components(tree, params.alpha, rel_tol)
    return params.sigma_y**2 * b + params.sigma_theta**2 * c


def residual_cov(tree: PhyloTree, params: OUOUParams, rel_tol: float = 1e-6) -> np.ndarray:
    """Residual covariance V of the trait-on-optimum regression:

        V(i, j) = Cov[y_i, y_j] - 2*p(a*t_a)*Cov[y, theta] + p(a*t_a)*Var[theta]

    with the ancestor moments evaluated at t = t_a(i, j).  The diagonal
    uses the same formula at t_a = depth.  A diagonal jitter is added if
    needed so the result always admits a Cholesky factorization.
    """
    raw = _residual_cov_raw(tree, params, rel_tol)
    _, jitter = cholesky_with_jitter(raw)
    if jitter:
        raw = raw + jitter * np.eye(raw.shape[0])
    return raw


def covariance_bundle(tree: PhyloTree, params: OUOUParams, rel_tol: float = 1e-6) -> CovarianceBundle:
    """Assemble all three matrices for one (tree, params) pair."""
    raw = _residual_cov_raw(tree, params, rel_tol)
    _, jitter = cholesky_with_jitter(raw)
    if jitter:
        raw = raw + jitter * np.eye(raw.shape[0])
    return CovarianceBundle(
        t_alpha=predictor_cov(tree, params.alpha, params.sigma_x, rel_tol),
        trait_covariance=trait_cov(tree, params, rel_tol),
        residual_covariance=raw,
        jitter=jitter,
    )
