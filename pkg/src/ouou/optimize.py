"""Derivative-free minimization over a rectangular domain.

Powell's conjugate-direction method, built on a bracketing +
golden-section 1-D line minimizer.  Line searches are clipped to the
box, so the objective is never evaluated outside it.  Everything is
deterministic: identical inputs produce identical evaluation sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["BoxDomain", "OptimResult", "line_minimize", "minimize_powell"]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...
_GOLD = 1.0 / _INVPHI


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box with finite bounds, lower < upper per coordinate."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("lower must be < upper in every coordinate")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    trace: list[float] = field(default_factory=list)  # objective at each cycle end


def _checked(f, x):
    v = f(x)
    if not math.isfinite(v):
        raise ValueError(f"objective returned a non-finite value {v!r} at x={x!r}")
    return v


def line_minimize(f, bracket: tuple[float, float], tol: float) -> tuple[float, float]:
    """Golden-section search for a minimum of a scalar function on
    [bracket[0], bracket[1]].

    Shrinks the interval until its width is below `tol` and returns the
    best point seen, endpoints included (so a monotone function yields
    the boundary).  Raises ValueError if `f` returns a non-finite value.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    a, b = float(bracket[0]), float(bracket[1])
    if b < a:
        a, b = b, a
    best_x, best_f = a, _checked(f, a)
    fb = _checked(f, b)
    if fb < best_f:
        best_x, best_f = b, fb
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1 = _checked(f, x1)
    f2 = _checked(f, x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = _checked(f, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = _checked(f, x2)
    for x, fx in ((x1, f1), (x2, f2)):
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def _bracket_step(g, t_lo: float, t_hi: float, step: float, f0: float):
    """Expand golden-ratio steps from t = 0 until g rises, in whichever
    direction descends first; returns a sub-interval of [t_lo, t_hi]
    containing a minimum candidate.  g(0) = f0 is reused."""

    def expand(sign: float):
        # walk t: step, step*phi, ... until g increases or the wall is hit
        wall = t_hi if sign > 0 else t_lo
        t_prev, f_prev = 0.0, f0
        t = sign * step
        if sign > 0:
            t = min(t, wall)
        else:
            t = max(t, wall)
        if t == 0.0:
            return None
        ft = g(t)
        if ft >= f_prev:
            return None  # immediate rise; no descent this way
        while t != wall:
            t_next = t * _GOLD
            if sign > 0:
                t_next = min(t_next, wall)
            else:
                t_next = max(t_next, wall)
            f_next = g(t_next)
            if f_next >= ft:
                return (t_prev, t_next)  # minimum between the last three points
            t_prev, t, ft = t, t_next, f_next
        return (t_prev, wall)  # descended into the wall

    fwd = expand(+1.0)
    if fwd is not None:
        return fwd
    bwd = expand(-1.0)
    if bwd is not None:
        return bwd
    # both neighbors higher: minimum straddles 0
    return (max(-step, t_lo), min(step, t_hi))


def _line_search_box(f, x, direction, box: BoxDomain, line_tol: float, f_x: float):
    """Minimize f along x + t*direction, with t restricted to the box.

    Returns (new_x, new_f); never worse than (x, f_x).
    """
    t_lo, t_hi = -math.inf, math.inf
    for k in range(box.dim):
        d = direction[k]
        if d == 0.0:
            continue
        lo = (box.lower[k] - x[k]) / d
        hi = (box.upper[k] - x[k]) / d
        if lo > hi:
            lo, hi = hi, lo
        t_lo = max(t_lo, lo)
        t_hi = min(t_hi, hi)
    if not (math.isfinite(t_lo) and math.isfinite(t_hi)) or t_hi <= t_lo:
        return x, f_x  # zero direction or no feasible extent

    cache = {0.0: f_x}

    def g(t):
        if t in cache:
            return cache[t]
        v = _checked(f, np.clip(x + t * direction, box.lower, box.upper))
        cache[t] = v
        return v

    step = 0.1 * (t_hi - t_lo)
    lo, hi = _bracket_step(g, t_lo, t_hi, step, f_x)
    t_best, f_best = line_minimize(g, (lo, hi), line_tol)
    if f_best >= f_x:
        return x, f_x
    return np.clip(x + t_best * direction, box.lower, box.upper), f_best


def minimize_powell(
    f,
    start,
    box: BoxDomain,
    tol: float = 1e-10,
    max_iter: int = 200,
    line_tol: float = 1e-9,
    keep_trace: bool = True,
) -> OptimResult:
    """Powell direction-set minimization of `f` inside `box`.

    The direction set starts as the coordinate axes.  Each cycle line-
    minimizes along every direction; then the direction of the largest
    single-step decrease is replaced by the cycle's net displacement
    (classic update) and one extra line search runs along it.  Every
    `dim` cycles, the direction set is reset to the axes.  Terminates
    when the per-cycle decrease drops below tol*(|f| + tol), or when
    `max_iter` cycles have run (returning best-so-far, converged=False).
    """
    x = np.asarray(start, dtype=float).copy()
    if x.shape != box.lower.shape:
        raise ValueError("start must have the box's dimension")
    if not (np.all(x > box.lower) and np.all(x < box.upper)):
        raise ValueError("start must lie strictly inside the box")

    nfev = 0

    def counted(z):
        nonlocal nfev
        nfev += 1
        return f(z)

    fx = _checked(counted, x)
    dim = box.dim
    directions = np.eye(dim)
    trace: list[float] = []
    converged = False

    for cycle in range(1, max_iter + 1):
        x0, f0 = x.copy(), fx
        biggest_drop = 0.0
        drop_index = 0
        for i in range(dim):
            f_before = fx
            x, fx = _line_search_box(counted, x, directions[i], box, line_tol, fx)
            if f_before - fx > biggest_drop:
                biggest_drop = f_before - fx
                drop_index = i
        displacement = x - x0
        norm = float(np.linalg.norm(displacement))
        if norm > 0.0:
            new_direction = displacement / norm
            directions[drop_index] = new_direction
            x, fx = _line_search_box(counted, x, new_direction, box, line_tol, fx)
        if keep_trace:
            trace.append(fx)
        if f0 - fx < tol * (abs(fx) + tol):
            converged = True
            break
        if cycle % dim == 0:
            directions = np.eye(dim)

    return OptimResult(x=x, fun=fx, nfev=nfev, converged=converged, trace=trace)
