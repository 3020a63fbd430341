"""Tree-structured simulation of the coupled (x, theta, y) system.

Euler-Maruyama integration of

    dx     = -alpha * x dt + sigma_x dW_x        (predictor, optimum of 0)
    theta  = b0 + b1 * x                          (enforced exactly)
    dy     = -alpha * (y - theta) dt + sigma_y dW_y

along every branch of a phylogeny; at a split both children copy the
parent state and continue with independent noise.  Each branch draws
from its own generator spawned from the run seed, so results do not
depend on traversal or execution order.

This module is the verification oracle for the closed forms in
`kernel` and `covariance`: `mc_moments` estimates the single-lineage
moments, `simulate_tree` the cross-tip covariance structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import OUOUParams
from .tree import PhyloTree

__all__ = ["SimConfig", "SimOutput", "MomentEstimate", "step_pair", "simulate_tree", "mc_moments"]


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one tree simulation run.

    step defaults to min(branch length)/100; it must not exceed
    min(branch length)/10.  Zero-length branches are copied without
    integration and do not constrain the step.
    """

    params: OUOUParams
    tree: PhyloTree
    step: float | None = None
    paths: int = 1
    seed: int = 0
    record_nodes: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.step is not None:
            if self.step <= 0:
                raise ValueError("step must be > 0")
            min_pos = self._min_positive_branch()
            if min_pos is not None and self.step > min_pos / 10.0:
                raise ValueError(
                    f"step {self.step:g} too coarse: must be <= min branch length / 10 "
                    f"= {min_pos / 10.0:g}"
                )

    def _min_positive_branch(self) -> float | None:
        lengths = [
            nd.length
            for i, nd in enumerate(self.tree._nodes)
            if i != self.tree._root and nd.length > 0
        ]
        return min(lengths) if lengths else None

    @property
    def effective_step(self) -> float:
        if self.step is not None:
            return self.step
        min_pos = self._min_positive_branch()
        return min_pos / 100.0 if min_pos is not None else 1.0


@dataclass(frozen=True)
class SimOutput:
    """Per-tip states for every path; tip order matches tree.tip_labels."""

    tip_labels: list[str]
    x: np.ndarray  # (n_tips, paths)
    y: np.ndarray  # (n_tips, paths)
    node_x: dict[int, np.ndarray] | None = None
    node_y: dict[int, np.ndarray] | None = None


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    se: float


def step_pair(y, theta, dt: float, params: OUOUParams, z1, z2):
    """One Euler-Maruyama step of the (y, theta) pair with independent
    standard-normal draws z1 (optimum) and z2 (trait):

        theta' = theta - alpha*theta*dt + sigma_theta*sqrt(dt)*z1
        y'     = y - alpha*(y - theta)*dt + sigma_y*sqrt(dt)*z2

    The trait drift uses the pre-step theta.  Accepts scalars or arrays.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    a = params.alpha
    sdt = np.sqrt(dt)
    theta_new = theta - a * theta * dt + params.sigma_theta * sdt * z1
    y_new = y - a * (y - theta) * dt + params.sigma_y * sdt * z2
    return y_new, theta_new


def _evolve_branch(x, y, length: float, params: OUOUParams, h: float, rng) -> tuple:
    """Integrate one branch; x drives theta = b0 + b1*x exactly.

    In-place Euler recursion: with theta = b0 + b1*x the trait drift
    -a*(y - theta)*dt folds into y*(1 - a*dt) + a*dt*(b0 + b1*x_old).
    """
    if length == 0.0:
        return x, y
    n_steps = max(1, int(np.ceil(length / h)))
    dt = length / n_steps
    a, b0, b1 = params.alpha, params.b0, params.b1
    keep = 1.0 - a * dt
    pull = a * dt
    cx = params.sigma_x * np.sqrt(dt)
    cy = params.sigma_y * np.sqrt(dt)
    x = np.array(x, dtype=float, copy=True)
    y = np.array(y, dtype=float, copy=True)
    for _ in range(n_steps):
        z = rng.standard_normal((2,) + x.shape)
        y *= keep
        y += (pull * b1) * x
        y += pull * b0
        y += cy * z[1]
        x *= keep
        x += cx * z[0]
    return x, y


def simulate_tree(config: SimConfig) -> SimOutput:
    """Simulate `config.paths` independent realizations of the tip states.

    The root starts at (x_a, y_a); every branch gets its own noise
    stream keyed by the child node's id, so the output is a pure
    function of (seed, tree, params, step, paths).
    """
    tree, params = config.tree, config.params
    h = config.effective_step
    paths = config.paths
    n_nodes = len(tree._nodes)
    streams = np.random.SeedSequence(config.seed).spawn(n_nodes)

    x_state: dict[int, np.ndarray] = {}
    y_state: dict[int, np.ndarray] = {}
    root = tree._root
    x_state[root] = np.full(paths, params.x_a, dtype=float)
    y_state[root] = np.full(paths, params.y_a, dtype=float)

    stack = [root]
    while stack:
        i = stack.pop()
        for c in tree._nodes[i].children:
            rng = np.random.default_rng(streams[c])
            cx, cy = _evolve_branch(
                x_state[i], y_state[i], tree._nodes[c].length, params, h, rng
            )
            x_state[c] = cx
            y_state[c] = cy
            stack.append(c)

    tip_ids = tree._tip_ids
    out_x = np.stack([x_state[i] for i in tip_ids])
    out_y = np.stack([y_state[i] for i in tip_ids])
    if config.record_nodes:
        return SimOutput(tree.tip_labels, out_x, out_y, node_x=x_state, node_y=y_state)
    return SimOutput(tree.tip_labels, out_x, out_y)


def mc_moments(
    params: OUOUParams, t: float, paths: int, h: float, seed: int = 0
) -> dict[str, MomentEstimate]:
    """Monte Carlo estimates of the single-lineage moments at time t.

    Integrates `paths` independent (y, theta) trajectories from
    (y_a, theta_a) with Euler steps of at most h, then returns sample
    estimates with standard errors for the five raw moments
    (theta_mean, theta_second_moment, y_mean, y_second_moment,
    cross_moment) and the derived var_theta, cov_y_theta, var_y.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    if h <= 0:
        raise ValueError("h must be > 0")
    if paths < 2:
        raise ValueError("paths must be >= 2")
    n_steps = max(1, int(np.ceil(t / h)))
    dt = t / n_steps
    rng = np.random.default_rng(seed)
    y = np.full(paths, params.y_a, dtype=float)
    theta = np.full(paths, params.theta_a, dtype=float)
    # in-place version of step_pair (same draw order: optimum then trait)
    keep = 1.0 - params.alpha * dt
    pull = params.alpha * dt
    c_th = params.sigma_theta * np.sqrt(dt)
    c_y = params.sigma_y * np.sqrt(dt)
    for _ in range(n_steps):
        z = rng.standard_normal((2, paths))
        y *= keep
        y += pull * theta
        y += c_y * z[1]
        theta *= keep
        theta += c_th * z[0]

    def mean_se(sample) -> MomentEstimate:
        return MomentEstimate(float(np.mean(sample)), float(np.std(sample, ddof=1) / np.sqrt(paths)))

    theta_c = theta - theta.mean()
    y_c = y - y.mean()
    return {
        "theta_mean": mean_se(theta),
        "theta_second_moment": mean_se(theta**2),
        "y_mean": mean_se(y),
        "y_second_moment": mean_se(y**2),
        "cross_moment": mean_se(y * theta),
        "var_theta": mean_se(theta_c**2),
        "cov_y_theta": mean_se(y_c * theta_c),
        "var_y": mean_se(y_c**2),
    }
