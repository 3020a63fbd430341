"""Closed-form moments and regression factors of the coupled OU model.

The model: a trait y is pulled at rate alpha toward a moving optimum
theta, itself an OU process driven by an OU predictor x through the
linear map theta = b0 + b1*x, so sigma_theta = |b1|*sigma_x.  The trait
and optimum noises are taken independent, and both mean-reversion rates
are equal (alpha).

Everything here is a pure function of parameter values and a time t (or
the dimensionless product u = alpha*t) and is vectorized over t.  Small
alpha*t is handled with expm1/series so the Brownian-motion limit stays
finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OUOUParams",
    "slope_factor_p",
    "intercept_q",
    "evolutionary_regression",
    "regression_on_optimum",
    "theta_moments",
    "cross_moment_y_theta",
    "y_moments",
    "var_cov",
    "ou_variance_scale",
]

# below this, slope_factor_p switches to its Taylor series; both branches
# agree to ~1e-15 at the switch point
_P_SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class OUOUParams:
    """Full parameter set of the coupled trait/predictor OU system.

    alpha: rate of adaptation (1/time), > 0.
    sigma_y: diffusion of the trait (trait units / sqrt(time)), >= 0.
    sigma_x: diffusion of the predictor (predictor units / sqrt(time)), >= 0.
    b0, b1: intercept/slope of the optimal regression theta = b0 + b1*x.
    x_a, y_a: ancestral predictor/trait values (at the root).

    sigma_theta and theta_a are derived, never set directly:
    sigma_theta = |b1|*sigma_x and theta_a = b0 + b1*x_a.
    """

    alpha: float
    sigma_y: float
    sigma_x: float
    b0: float
    b1: float
    x_a: float = 0.0
    y_a: float = 0.0

    def __post_init__(self):
        vals = (self.alpha, self.sigma_y, self.sigma_x, self.b0, self.b1, self.x_a, self.y_a)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"parameters must be finite, got {self}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.sigma_y < 0 or self.sigma_x < 0:
            raise ValueError("sigma_y and sigma_x must be >= 0")

    @property
    def sigma_theta(self) -> float:
        return abs(self.b1) * self.sigma_x

    @property
    def theta_a(self) -> float:
        return self.b0 + self.b1 * self.x_a


def _check_nonnegative(t, name: str):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} must be finite")
    if np.any(t < 0):
        raise ValueError(f"{name} must be >= 0")
    return t


def ou_variance_scale(alpha: float, t) -> np.ndarray:
    """(1 - exp(-2*alpha*t)) / (2*alpha), the OU variance accumulated per
    unit diffusion rate.  Tends to t as alpha -> 0 (Brownian limit)."""
    t = np.asarray(t, dtype=float)
    return -np.expm1(-2.0 * alpha * t) / (2.0 * alpha)


def slope_factor_p(u):
    """Attenuation factor p(u) of the evolutionary regression slope,

        p(u) = (1 - exp(-2u) - u*exp(-2u)) / (2*(1 - exp(-2u))),

    for u = alpha*t >= 0.  Monotone nondecreasing from 1/4 (u -> 0) to
    1/2 (u -> inf).  Below a small-u cutoff the Taylor series
    1/4 + u/4 - u^2/12 is used to avoid the 0/0 form.
    """
    u = _check_nonnegative(u, "u")
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.empty_like(u)
    small = u < _P_SERIES_CUTOFF
    us = u[small]
    out[small] = 0.25 + us / 4.0 - us * us / 12.0
    ub = u[~small]
    em = -np.expm1(-2.0 * ub)  # 1 - exp(-2u)
    out[~small] = (em - ub * np.exp(-2.0 * ub)) / (2.0 * em)
    return float(out[0]) if scalar else out


def intercept_q(u, b0: float, b1: float, x_a: float, y_a: float):
    """Intercept term q(u) = (b0 + b1*x_a)*(1 - exp(-u)) + y_a*exp(-u).

    q(0) = y_a (the ancestor); q(inf) = b0 + b1*x_a (the optimum at the
    ancestral predictor value).
    """
    u = _check_nonnegative(u, "u")
    for name, v in (("b0", b0), ("b1", b1), ("x_a", x_a), ("y_a", y_a)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    e = np.exp(-u)
    q = (b0 + b1 * x_a) * -np.expm1(-u) + y_a * e
    return float(q) if q.ndim == 0 else q


def evolutionary_regression(params: OUOUParams, t, x):
    """Expected trait given the predictor: q(alpha*t) + p(alpha*t)*b1*(x - x_a)."""
    t = _check_nonnegative(t, "t")
    u = params.alpha * t
    q = intercept_q(u, params.b0, params.b1, params.x_a, params.y_a)
    return q + slope_factor_p(u) * params.b1 * (np.asarray(x, dtype=float) - params.x_a)


def regression_on_optimum(params: OUOUParams, t):
    """Coefficients (beta0, beta1) of the regression of the trait on its
    optimum at time t:

        beta1 = p(alpha*t)
        beta0 = alpha*theta_a*t*exp(-alpha*t) + y_a*exp(-alpha*t) - beta1*theta_a
    """
    t = _check_nonnegative(t, "t")
    u = params.alpha * t
    beta1 = slope_factor_p(u)
    e = np.exp(-u)
    beta0 = params.theta_a * u * e + params.y_a * e - beta1 * params.theta_a
    if np.ndim(t) == 0:
        return float(beta0), float(beta1)
    return beta0, beta1


def theta_moments(params: OUOUParams, t):
    """(E[theta_t], E[theta_t^2]) for the optimum started at theta_a."""
    t = _check_nonnegative(t, "t")
    a, s2 = params.alpha, params.sigma_theta**2
    th0 = params.theta_a
    e2 = np.exp(-2.0 * a * t)
    mean = th0 * np.exp(-a * t)
    m2 = s2 * ou_variance_scale(a, t) + th0**2 * e2
    if np.ndim(t) == 0:
        return float(mean), float(m2)
    return mean, m2


def cross_moment_y_theta(params: OUOUParams, t):
    """E[y_t * theta_t] for the pair started at (y_a, theta_a):

        sigma_theta^2/(4a) * (1 - e^{-2at}) + y0*th0*e^{-2at}
        + (a*th0^2 - sigma_theta^2/2) * t * e^{-2at}
    """
    t = _check_nonnegative(t, "t")
    a, s2 = params.alpha, params.sigma_theta**2
    th0, y0 = params.theta_a, params.y_a
    e2 = np.exp(-2.0 * a * t)
    m = (
        s2 * ou_variance_scale(a, t) / 2.0
        + y0 * th0 * e2
        + (a * th0**2 - s2 / 2.0) * t * e2
    )
    return float(m) if np.ndim(t) == 0 else m


def y_moments(params: OUOUParams, t):
    """(E[y_t], E[y_t^2]) for the trait started at (y_a, theta_a).

    The t^2 term of the second moment carries sigma_theta^2 (not
    sigma_theta): that is the dimensionally consistent coefficient and
    the one produced by integrating the moment ODE
    dE[y^2]/dt = sigma_y^2 - 2a*E[y^2] + 2a*E[y*theta].
    """
    t = _check_nonnegative(t, "t")
    a = params.alpha
    sy2, s2 = params.sigma_y**2, params.sigma_theta**2
    th0, y0 = params.theta_a, params.y_a
    e = np.exp(-a * t)
    e2 = e * e
    mean = a * th0 * t * e + y0 * e
    vs = ou_variance_scale(a, t)  # (1 - e^{-2at}) / (2a)
    m2 = (
        sy2 * vs
        + s2 * vs / 2.0
        + y0**2 * e2
        + (2.0 * a * y0 * th0 - s2 / 2.0) * t * e2
        + (a**2 * th0**2 - a * s2 / 2.0) * t * t * e2
    )
    if np.ndim(t) == 0:
        return float(mean), float(m2)
    return mean, m2


def var_cov(params: OUOUParams, t):
    """(Var[theta_t], Cov[y_t, theta_t], Var[y_t]):

        Var[theta] = sigma_theta^2 * (1 - e^{-2at}) / (2a)
        Cov[y, theta] = sigma_theta^2 * ((1 - e^{-2at})/(4a) - (t/2)*e^{-2at})
        Var[y] = (sigma_y^2/(2a) + sigma_theta^2/(4a)) * (1 - e^{-2at})
                 - sigma_theta^2 * t*(1 + a*t)/2 * e^{-2at}

    Each equals the corresponding second moment minus the product of
    means, exactly.
    """
    t = _check_nonnegative(t, "t")
    a = params.alpha
    sy2, s2 = params.sigma_y**2, params.sigma_theta**2
    e2 = np.exp(-2.0 * a * t)
    vs = ou_variance_scale(a, t)
    var_theta = s2 * vs
    cov = s2 * (vs / 2.0 - t / 2.0 * e2)
    var_y = sy2 * vs + s2 * vs / 2.0 - s2 * t * (1.0 + a * t) / 2.0 * e2
    if np.ndim(t) == 0:
        return float(var_theta), float(cov), float(var_y)
    return var_theta, cov, var_y
