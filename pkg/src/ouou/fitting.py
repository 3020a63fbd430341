"""GLS / maximum-likelihood fitting of the evolutionary regression.

The estimation alternates two stages until the regressors stabilize:

1. an ordinary least-squares seed for the regressors b = (b0, b1),
2. a Powell search for the rate of adaptation and trait diffusion
   (alpha, sigma_y^2) maximizing the Gaussian log-likelihood with the
   current b (the residual covariance V and the design matrix both
   depend on alpha and, through sigma_theta = |b1|*sigma_x_hat, on b),
3. a GLS update of b with the new V and design,

repeating 2-3 until ||b_new - b_old|| drops below `delta` (1e-5 by
default).  The predictor's mean and diffusion rate are profiled out at
every candidate alpha from their own OU likelihood (`x_mle`).

Alternative regression models plug in through `ModelHook`: a slope
scaling rho(u) for the design column and a residual-covariance builder.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from . import covariance
from .covariance import NotPositiveDefiniteError, cholesky_with_jitter
from .kernel import OUOUParams, slope_factor_p
from .optimize import BoxDomain, minimize_powell
from .tree import PhyloTree, validate_ultrametric

__all__ = [
    "TraitTable",
    "ModelHook",
    "FitConfig",
    "FitReport",
    "ComparisonRow",
    "x_mle",
    "gls_solve",
    "log_likelihood",
    "r_squared",
    "aicc",
    "fit_ouou",
    "compare_models",
    "default_hooks",
]

# objective value for candidate (alpha, sigma_y^2) whose V cannot be made
# positive definite: large but finite, so the search just avoids the region
_REJECTED = 1e9


# ------------------------------------------------------------------ data


@dataclass
class TraitTable:
    """Per-species (x, y) observations; species must biject onto tree tips."""

    species: list[str]
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if not (len(self.species) == self.x.size == self.y.size):
            raise ValueError("species, x and y must have equal lengths")
        if len(set(self.species)) != len(self.species):
            raise ValueError("duplicate species in trait table")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("trait values must be finite")

    @classmethod
    def from_csv(cls, path) -> "TraitTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty traits file") from None
            if [h.strip() for h in header] != ["species", "x", "y"]:
                raise ValueError(
                    f"{path}: expected header 'species,x,y', got {','.join(header)!r}"
                )
            species, xs, ys = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
                species.append(row[0].strip())
                try:
                    xs.append(float(row[1]))
                    ys.append(float(row[2]))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric trait value") from None
        return cls(species, np.array(xs), np.array(ys))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["species", "x", "y"])
            for s, xv, yv in zip(self.species, self.x, self.y):
                writer.writerow([s, repr(float(xv)), repr(float(yv))])

    def aligned_to(self, tree: PhyloTree) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) reordered to the tree's tip order; errors name any
        species missing from the tree or tips missing from the table."""
        tips = tree.tip_labels
        have = set(self.species)
        want = set(tips)
        orphans = sorted(have - want)
        if orphans:
            raise ValueError(f"species not found in the tree: {', '.join(orphans)}")
        missing = sorted(want - have)
        if missing:
            raise ValueError(f"tree tips missing from the trait table: {', '.join(missing)}")
        index = {s: k for k, s in enumerate(self.species)}
        order = [index[t] for t in tips]
        return self.x[order], self.y[order]


@dataclass(frozen=True)
class ModelHook:
    """A pluggable regression model for comparison runs.

    slope_scale maps u = alpha * depth to the attenuation of the design
    column; residual_builder returns a positive-definite residual
    covariance for (tree, params).
    """

    name: str
    slope_scale: Callable[[float], float]
    residual_builder: Callable[[PhyloTree, OUOUParams], np.ndarray]
    k_params: int = 4


def default_hooks() -> dict[str, ModelHook]:
    """Built-in hooks: 'ouou' (attenuated slope) and 'flat' (same
    residual covariance, no slope attenuation)."""
    return {
        "ouou": ModelHook("ouou", slope_factor_p, covariance.residual_cov),
        "flat": ModelHook("flat", lambda u: 1.0, covariance.residual_cov),
    }


@dataclass
class FitConfig:
    delta: float = 1e-5            # convergence threshold on ||b_new - b_old||
    max_outer: int = 100
    alpha_max: float | None = None  # default 50 / tree depth
    alpha_min: float | None = None  # default 1e-6 / tree depth
    powell_tol: float = 1e-10
    powell_max_iter: int = 200
    line_tol: float = 1e-6
    fixed_alpha: float | None = None
    fixed_sigma_y2: float | None = None
    hook: ModelHook | None = None   # default: the 'ouou' hook
    ultrametric_rel_tol: float = 1e-6
    n_starts: int = 1               # extra Powell starts, drawn from start_seed
    start_seed: int = 0


@dataclass
class FitReport:
    b0: float
    b1: float
    alpha_hat: float
    sigma_y2_hat: float
    sigma_x2_hat: float
    x_mean_hat: float
    log_likelihood: float
    r_squared: float
    aicc: float
    iterations: int
    delta_trace: list[float]
    converged: bool
    n: int
    depth: float
    k_params: int
    hook_name: str
    optimizer_evals: int = 0

    @property
    def effective_slope(self) -> float:
        """Slope of the fitted line in raw x units (attenuation included)."""
        return self._scale * self.b1

    @property
    def effective_intercept(self) -> float:
        return self.b0 - self._scale * self.b1 * self.x_mean_hat

    _scale: float = field(default=1.0, repr=False)

    def line(self) -> str:
        a, b = self.effective_intercept, self.effective_slope
        sign = "+" if b >= 0 else "-"
        return f"y = {a:.4f} {sign} {abs(b):.4f} x"

    def to_dict(self) -> dict:
        return {
            "b0": self.b0,
            "b1": self.b1,
            "alpha_hat": self.alpha_hat,
            "sigma_y2_hat": self.sigma_y2_hat,
            "sigma_x2_hat": self.sigma_x2_hat,
            "x_mean_hat": self.x_mean_hat,
            "log_likelihood": self.log_likelihood,
            "r_squared": self.r_squared,
            "aicc": self.aicc,
            "iterations": self.iterations,
            "delta_trace": self.delta_trace,
            "converged": self.converged,
            "n": self.n,
            "depth": self.depth,
            "k_params": self.k_params,
            "hook": self.hook_name,
            "effective_intercept": self.effective_intercept,
            "effective_slope": self.effective_slope,
            "line": self.line(),
        }


@dataclass
class ComparisonRow:
    name: str
    line: str
    r_squared: float
    aicc: float
    delta_aicc: float
    co_supported: bool
    converged: bool
    error: str | None = None


# ------------------------------------------------------- building blocks


def x_mle(tree: PhyloTree, x: np.ndarray, alpha: float, rel_tol: float = 1e-6):
    """GLS estimates of the predictor's root mean and diffusion rate at a
    given alpha, using the unit-rate OU covariance:

        x_mean    = (1' T^-1 1)^-1 (1' T^-1 x)
        sigma_x^2 = (x - x_mean)' T^-1 (x - x_mean) / (n - 1)
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    t_unit = covariance.predictor_cov(tree, alpha, 1.0, rel_tol)
    chol, _ = cholesky_with_jitter(t_unit)
    w_one = solve_triangular(chol, np.ones(n), lower=True)
    w_x = solve_triangular(chol, x, lower=True)
    x_mean = float(w_one @ w_x) / float(w_one @ w_one)
    w_r = solve_triangular(chol, x - x_mean, lower=True)
    sigma_x2 = float(w_r @ w_r) / (n - 1)
    return x_mean, sigma_x2


def _gls_from_factor(X: np.ndarray, chol: np.ndarray, y: np.ndarray) -> np.ndarray:
    wX = solve_triangular(chol, X, lower=True)
    wy = solve_triangular(chol, y, lower=True)
    b, _, rank, _ = np.linalg.lstsq(wX, wy, rcond=None)
    if rank < X.shape[1]:
        raise ValueError("design matrix is rank deficient (constant predictor?)")
    return b


def _log_likelihood_from_factor(
    y: np.ndarray, X: np.ndarray, b: np.ndarray, chol: np.ndarray
) -> float:
    r = y - X @ b
    z = solve_triangular(chol, r, lower=True)
    n = y.size
    return float(-0.5 * n * np.log(2.0 * np.pi) - np.sum(np.log(np.diag(chol))) - 0.5 * (z @ z))


def gls_solve(X: np.ndarray, V: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Generalized least squares b = (X' V^-1 X)^-1 X' V^-1 y, computed
    by whitening with the Cholesky factor of V (V^-1 never formed)."""
    return _gls_from_factor(X, np.linalg.cholesky(V), y)


def log_likelihood(y: np.ndarray, X: np.ndarray, b: np.ndarray, V: np.ndarray) -> float:
    """Gaussian log-density -n/2 log(2 pi) - 1/2 log det V - 1/2 r' V^-1 r
    with r = y - X b, evaluated through the Cholesky factor of V."""
    return _log_likelihood_from_factor(y, X, b, np.linalg.cholesky(V))


def r_squared(y: np.ndarray, fitted: np.ndarray) -> float:
    """Squared Pearson correlation between observed and fitted values.

    A constant fit carries no linear signal and scores 0; constant
    observations are an error.
    """
    y = np.asarray(y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    sy = np.std(y)
    if sy == 0:
        raise ValueError("r_squared is undefined for zero-variance observations")
    sf = np.std(fitted)
    if sf == 0:
        return 0.0
    c = float(np.mean((y - y.mean()) * (fitted - fitted.mean())) / (sy * sf))
    return c * c


def aicc(log_lik: float, k: int, n: int) -> float:
    """Small-sample corrected information criterion:
    -2*log_lik + 2k + 2k(k+1)/(n-k-1)."""
    if n <= k + 1:
        raise ValueError(f"aicc requires n > k + 1 (got n={n}, k={k})")
    return -2.0 * log_lik + 2.0 * k + 2.0 * k * (k + 1) / (n - k - 1)


# ----------------------------------------------------------------- fit


def _design(x: np.ndarray, x_a: float, scale: float) -> np.ndarray:
    return np.column_stack([np.ones(x.size), scale * (x - x_a)])


class _Model:
    """Everything (V, X, likelihood) derivable from (alpha, sigma_y^2)
    at the current regressors b.

    For the built-in residual builder the alpha-dependent pieces are
    cached per alpha: the per-class components (b_u, c_u) of
    V = sigma_y^2*B + sigma_theta^2*C, the predictor estimates (x_a,
    sigma_x^2) computed from B's factor, and the design-column scale.
    Coordinate line searches hold alpha fixed, so this removes most of
    the transcendental and factorization work per likelihood call.
    """

    _CACHE_LIMIT = 50_000  # per-alpha entries are a few hundred bytes

    def __init__(self, tree, x, y, hook, rel_tol):
        self.tree = tree
        self.x = x
        self.y = y
        self.hook = hook
        self.rel_tol = rel_tol
        self.depth = tree.depth
        self.fast = hook.residual_builder is covariance.residual_cov
        self._alpha_cache: dict[float, tuple] = {}
        self._ones = np.ones(x.size)

    def _per_alpha(self, alpha: float):
        hit = self._alpha_cache.get(alpha)
        if hit is None:
            b_u, c_u = covariance._component_classes(self.tree, alpha, self.rel_tol)
            inverse = self.tree.pair_time_classes[2]
            chol_b, _ = cholesky_with_jitter(b_u[inverse])
            w_one = solve_triangular(chol_b, self._ones, lower=True)
            w_x = solve_triangular(chol_b, self.x, lower=True)
            x_a = float(w_one @ w_x) / float(w_one @ w_one)
            w_r = solve_triangular(chol_b, self.x - x_a, lower=True)
            sigma_x2 = float(w_r @ w_r) / (self.x.size - 1)
            scale = float(self.hook.slope_scale(alpha * self.depth))
            hit = (b_u, c_u, x_a, sigma_x2, scale)
            if len(self._alpha_cache) < self._CACHE_LIMIT:
                self._alpha_cache[alpha] = hit
        return hit

    def assemble(self, alpha: float, sigma_y2: float, b: np.ndarray):
        """(X, V, chol(V), x_a, sigma_x2, scale) at one candidate point."""
        sigma_y2 = max(sigma_y2, 0.0)
        if self.fast:
            b_u, c_u, x_a, sigma_x2, scale = self._per_alpha(alpha)
            sigma_theta2 = b[1] * b[1] * sigma_x2
            inverse = self.tree.pair_time_classes[2]
            raw = (sigma_y2 * b_u + sigma_theta2 * c_u)[inverse]
            chol, jitter = cholesky_with_jitter(raw)
            if jitter:
                raw = raw + jitter * np.eye(raw.shape[0])
        else:
            x_a, sigma_x2 = x_mle(self.tree, self.x, alpha, self.rel_tol)
            params = OUOUParams(
                alpha=alpha,
                sigma_y=math.sqrt(sigma_y2),
                sigma_x=math.sqrt(max(sigma_x2, 0.0)),
                b0=float(b[0]),
                b1=float(b[1]),
                x_a=x_a,
            )
            raw = self.hook.residual_builder(self.tree, params)
            chol, jitter = cholesky_with_jitter(raw)
            if jitter:
                raw = raw + jitter * np.eye(raw.shape[0])
            scale = float(self.hook.slope_scale(alpha * self.depth))
        X = _design(self.x, x_a, scale)
        return X, raw, chol, x_a, sigma_x2, scale

    def negative_log_likelihood(self, point: np.ndarray, b: np.ndarray) -> float:
        alpha, sigma_y2 = float(point[0]), float(point[1])
        try:
            X, _, chol, _, _, _ = self.assemble(alpha, sigma_y2, b)
            return -_log_likelihood_from_factor(self.y, X, b, chol)
        except (NotPositiveDefiniteError, np.linalg.LinAlgError):
            return _REJECTED


def fit_ouou(tree: PhyloTree, traits: TraitTable, config: FitConfig | None = None) -> FitReport:
    """Run the full alternating estimation on one tree + trait table.

    Returns a FitReport; `converged` is False when the outer loop hits
    `max_outer` without the regressor change dropping below `delta`
    (the best-so-far state is still reported).
    """
    config = config or FitConfig()
    if config.max_outer < 1:
        raise ValueError("max_outer must be >= 1")
    depth = validate_ultrametric(tree, config.ultrametric_rel_tol)
    x, y = traits.aligned_to(tree)
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 species, got {n}")
    if np.ptp(x) == 0:
        raise ValueError("predictor is constant across species; slope is unidentifiable")
    if depth <= 0:
        raise ValueError("tree depth must be positive")

    hook = config.hook if config.hook is not None else default_hooks()["ouou"]
    alpha_hi = config.alpha_max if config.alpha_max is not None else 50.0 / depth
    alpha_lo = config.alpha_min if config.alpha_min is not None else 1e-6 / depth
    sigma2_hi = float(np.ptp(y))
    if sigma2_hi <= 0:
        sigma2_hi = 1e-8 * (1.0 + abs(float(np.mean(y))))  # constant observations
    box = BoxDomain(np.array([alpha_lo, 0.0]), np.array([alpha_hi, sigma2_hi]))

    default_start = np.array(
        [
            min(max(1.0 / depth, alpha_lo * 1.01), alpha_hi * 0.99),
            min(max(0.5 * float(np.var(y)), 0.01 * sigma2_hi), 0.99 * sigma2_hi),
        ]
    )
    starts = [default_start]
    if config.n_starts > 1:
        rng = np.random.default_rng(config.start_seed)
        width = box.upper - box.lower
        for _ in range(config.n_starts - 1):
            starts.append(box.lower + width * (0.01 + 0.98 * rng.random(2)))

    best: FitReport | None = None
    for start in starts:
        report = _fit_single_start(tree, x, y, depth, hook, box, start, config)
        if best is None:
            best = report
        elif (report.converged, report.log_likelihood) > (best.converged, best.log_likelihood):
            best = report
    return best


def _fit_single_start(tree, x, y, depth, hook, box, start, config: FitConfig) -> FitReport:
    n = x.size
    model = _Model(tree, x, y, hook, config.ultrametric_rel_tol)

    # OLS seed on the raw centered column: independent of alpha, with the
    # attenuation factor initially absorbed into b1
    X_seed = _design(x, float(np.mean(x)), 1.0)
    b, _, rank, _ = np.linalg.lstsq(X_seed, y, rcond=None)
    if rank < 2:
        raise ValueError("design matrix is rank deficient (constant predictor?)")

    fixed = config.fixed_alpha is not None and config.fixed_sigma_y2 is not None
    point = np.asarray(start, dtype=float)
    if not fixed:
        point = _finite_start(model, point, b, box)
    delta_trace: list[float] = []
    converged = False
    evals = 0
    iterations = 0

    for iterations in range(1, config.max_outer + 1):
        if fixed:
            alpha_hat, sigma_y2_hat = config.fixed_alpha, config.fixed_sigma_y2
        else:
            result = minimize_powell(
                lambda p: model.negative_log_likelihood(p, b),
                _interior(point, box),
                box,
                tol=config.powell_tol,
                max_iter=config.powell_max_iter,
                line_tol=config.line_tol,
                keep_trace=False,
            )
            point = result.x
            evals += result.nfev
            alpha_hat, sigma_y2_hat = float(point[0]), float(point[1])

        X, _, chol, x_a, sigma_x2, scale = model.assemble(alpha_hat, sigma_y2_hat, b)
        b_new = _gls_from_factor(X, chol, y)
        delta = float(np.linalg.norm(b_new - b))
        delta_trace.append(delta)
        b = b_new
        if delta < config.delta:
            converged = True
            break

    X, _, chol, x_a, sigma_x2, scale = model.assemble(alpha_hat, sigma_y2_hat, b)
    ll = _log_likelihood_from_factor(y, X, b, chol)
    fitted = X @ b
    r2 = 0.0 if np.ptp(y) == 0 else r_squared(y, fitted)
    k = hook.k_params
    crit = aicc(ll, k, n) if n > k + 1 else float("nan")

    return FitReport(
        b0=float(b[0]),
        b1=float(b[1]),
        alpha_hat=alpha_hat,
        sigma_y2_hat=sigma_y2_hat,
        sigma_x2_hat=sigma_x2,
        x_mean_hat=x_a,
        log_likelihood=ll,
        r_squared=r2,
        aicc=crit,
        iterations=iterations,
        delta_trace=delta_trace,
        converged=converged,
        n=n,
        depth=depth,
        k_params=k,
        hook_name=hook.name,
        optimizer_evals=evals,
        _scale=scale,
    )


def _interior(point: np.ndarray, box: BoxDomain) -> np.ndarray:
    margin = 1e-9 * (box.upper - box.lower)
    return np.clip(point, box.lower + margin, box.upper - margin)


def _finite_start(model: _Model, point: np.ndarray, b: np.ndarray, box: BoxDomain) -> np.ndarray:
    """The requested start, or the first point of a deterministic probe
    grid whose residual covariance is positive definite.  Starting the
    search on the rejection plateau would leave Powell nothing to
    descend."""
    candidates = [point]
    width = box.upper - box.lower
    for fa in (0.25, 0.5, 0.1, 0.75):
        for fs in (0.5, 0.25, 0.75, 0.9):
            candidates.append(box.lower + width * np.array([fa, fs]))
    for cand in candidates:
        cand = _interior(np.asarray(cand, dtype=float), box)
        if model.negative_log_likelihood(cand, b) < _REJECTED:
            return cand
    raise NotPositiveDefiniteError(
        "no candidate (alpha, sigma_y^2) with a positive-definite residual covariance found"
    )


def compare_models(
    tree: PhyloTree,
    traits: TraitTable,
    hooks: list[ModelHook],
    config: FitConfig | None = None,
) -> list[ComparisonRow]:
    """Fit one model per hook and rank them by small-sample criterion.

    delta_aicc is relative to the best (lowest) criterion among models
    that fit successfully; models within 2 units are flagged
    co-supported.  A failing model gets an error row and does not abort
    the others.
    """
    if not hooks:
        raise ValueError("need at least one model hook")
    config = config or FitConfig()
    rows: list[ComparisonRow] = []
    reports: list[FitReport | None] = []
    for hook in hooks:
        try:
            report = fit_ouou(tree, traits, replace(config, hook=hook))
            reports.append(report)
            rows.append(
                ComparisonRow(
                    name=hook.name,
                    line=report.line(),
                    r_squared=report.r_squared,
                    aicc=report.aicc,
                    delta_aicc=float("nan"),
                    co_supported=False,
                    converged=report.converged,
                )
            )
        except Exception as exc:  # one model failing must not abort the rest
            reports.append(None)
            rows.append(
                ComparisonRow(
                    name=hook.name,
                    line="",
                    r_squared=float("nan"),
                    aicc=float("nan"),
                    delta_aicc=float("nan"),
                    co_supported=False,
                    converged=False,
                    error=str(exc),
                )
            )
    finite = [row.aicc for row in rows if row.error is None and math.isfinite(row.aicc)]
    if finite:
        best = min(finite)
        for row in rows:
            if row.error is None and math.isfinite(row.aicc):
                row.delta_aicc = row.aicc - best
                row.co_supported = row.delta_aicc <= 2.0
    return rows
