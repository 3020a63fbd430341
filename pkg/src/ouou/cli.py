"""Command-line front end: fit, simulate, compare and validate.

Exit codes: 0 success, 1 input error, 2 numerical non-convergence.
All outputs are plain text/CSV/JSON and are byte-deterministic for
identical inputs and seed.
"""

from __future__ import annotations

import argparse
import io
import json
import sys

import numpy as np

from . import diagnostics
from .fitting import FitConfig, TraitTable, compare_models, default_hooks, fit_ouou
from .kernel import OUOUParams
from .simulate import SimConfig, mc_moments, simulate_tree
from .tree import normalize_tip_depths, parse_newick

_EXIT_OK = 0
_EXIT_INPUT = 1
_EXIT_NOCONV = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ouou",
        description="Evolutionary regression under coupled trait/predictor OU dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file; flags take precedence")
        p.add_argument("--out", help="output path (default: stdout)")

    p_fit = sub.add_parser("fit", help="fit the evolutionary regression to a tree + traits")
    common(p_fit)
    p_fit.add_argument("--tree", required=True, help="Newick tree file (branch lengths in time units)")
    p_fit.add_argument("--traits", required=True, help="CSV with header species,x,y")
    p_fit.add_argument("--format", choices=["json", "text"], default=None, help="report format (default text)")
    p_fit.add_argument("--delta", type=float, default=None, help="convergence threshold on ||b_new - b_old|| (default 1e-5)")
    p_fit.add_argument("--alpha-max", type=float, default=None, help="upper bound for the adaptation rate (1/time; default 50/depth)")
    p_fit.add_argument("--alpha-min", type=float, default=None, help="lower bound for the adaptation rate (1/time; default 1e-6/depth)")
    p_fit.add_argument("--hook", default=None, help="model hook name (default ouou)")
    p_fit.add_argument("--multistart", type=int, default=None, help="number of optimizer starts (default 1)")
    p_fit.add_argument("--seed", type=int, default=None, help="seed for extra optimizer starts (default 0)")
    p_fit.add_argument("--normalize-depths", action="store_true", help="stretch pendant branches so all tip depths equal their mean")
    p_fit.add_argument("--curve-out", default=None, help="path for the fitted-curve sample CSV (default: derived from --out)")

    p_sim = sub.add_parser("simulate", help="simulate tip traits along a tree")
    common(p_sim)
    p_sim.add_argument("--tree", required=True, help="Newick tree file")
    p_sim.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p_sim.add_argument("--alpha", type=float, default=None, help="adaptation rate (1/time; default 1)")
    p_sim.add_argument("--sigma-y", type=float, default=None, help="trait diffusion (trait/sqrt(time); default 1)")
    p_sim.add_argument("--sigma-x", type=float, default=None, help="predictor diffusion (predictor/sqrt(time); default 1)")
    p_sim.add_argument("--b0", type=float, default=None, help="optimum intercept (trait units; default 0)")
    p_sim.add_argument("--b1", type=float, default=None, help="optimum slope (trait per predictor unit; default 1)")
    p_sim.add_argument("--x-anc", type=float, default=None, help="ancestral predictor value (default 0)")
    p_sim.add_argument("--y-anc", type=float, default=None, help="ancestral trait value (default 0)")
    p_sim.add_argument("--step", type=float, default=None, help="integrator step (time units; default min branch/100)")
    p_sim.add_argument("--moments", action="store_true", help="emit single-lineage moment estimates (JSON) instead of a trait table")
    p_sim.add_argument("--paths", type=int, default=None, help="paths for --moments (default 100000)")
    p_sim.add_argument("--time", type=float, default=None, help="horizon for --moments (time units; default tree depth)")

    p_cmp = sub.add_parser("compare", help="fit several model hooks and rank them")
    common(p_cmp)
    p_cmp.add_argument("--tree", required=True)
    p_cmp.add_argument("--traits", required=True)
    p_cmp.add_argument("--hooks", default=None, help="comma-separated hook names (default ouou,flat)")
    p_cmp.add_argument("--format", choices=["text", "csv", "json"], default=None)
    p_cmp.add_argument("--delta", type=float, default=None)
    p_cmp.add_argument("--alpha-max", type=float, default=None)
    p_cmp.add_argument("--alpha-min", type=float, default=None)
    p_cmp.add_argument("--multistart", type=int, default=None)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--normalize-depths", action="store_true")

    p_val = sub.add_parser("validate", help="run the Monte Carlo oracle checks")
    common(p_val)
    p_val.add_argument("--paths", type=int, default=None, help="simulated paths per check (default 200000)")
    p_val.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p_val.add_argument("--step", type=float, default=None, help="tree-simulation step override (time units)")

    return parser


# ------------------------------------------------------------ plumbing


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, key: str, default, cast):
    """flags > config file > default"""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if args.config:
        file_values = _load_config_file(args.config)
        if key in file_values:
            raw = file_values[key]
            return raw if cast is str else cast(raw)
    return default


def _write(out_path: str | None, text: str) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_tree(args):
    with open(args.tree, encoding="utf-8") as fh:
        tree = parse_newick(fh.read())
    if getattr(args, "normalize_depths", False):
        tree = normalize_tip_depths(tree)
    return tree


def _fit_config(args, hook=None) -> FitConfig:
    return FitConfig(
        delta=_resolve(args, "delta", 1e-5, float),
        alpha_max=_resolve(args, "alpha_max", None, float),
        alpha_min=_resolve(args, "alpha_min", None, float),
        n_starts=_resolve(args, "multistart", 1, int),
        start_seed=_resolve(args, "seed", 0, int),
        hook=hook,
    )


def _resolve_hooks(names_csv: str):
    registry = default_hooks()
    names = [s.strip() for s in names_csv.split(",") if s.strip()]
    if not names:
        raise ValueError("no hook names given")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate hook name in {names_csv!r}")
    unknown = [s for s in names if s not in registry]
    if unknown:
        raise ValueError(
            f"unknown hook name(s): {', '.join(unknown)}; known hooks: {', '.join(sorted(registry))}"
        )
    return [registry[s] for s in names]


# ------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    tree = _read_tree(args)
    traits = TraitTable.from_csv(args.traits)
    hook = _resolve_hooks(_resolve(args, "hook", "ouou", str))[0]
    report = fit_ouou(tree, traits, _fit_config(args, hook=hook))

    fmt = _resolve(args, "format", "text", str)
    if fmt == "json":
        _write(args.out, _json(report.to_dict()))
    else:
        _write(args.out, _format_report_text(report))

    curve_path = args.curve_out
    if curve_path is None:
        curve_path = f"{args.out.rsplit('.', 1)[0]}_curve.csv" if args.out else "fit_curve.csv"
    _write(curve_path, _curve_csv(report, traits))
    return _EXIT_OK if report.converged else _EXIT_NOCONV


def _format_report_text(report) -> str:
    d = report.to_dict()
    lines = [
        f"fitted line        {d['line']}",
        f"b0 (optimum icpt)  {d['b0']:.6g}",
        f"b1 (optimum slope) {d['b1']:.6g}",
        f"alpha_hat          {d['alpha_hat']:.6g}  (1/time)",
        f"sigma_y2_hat       {d['sigma_y2_hat']:.6g}  (trait^2/time)",
        f"sigma_x2_hat       {d['sigma_x2_hat']:.6g}  (predictor^2/time)",
        f"x_mean_hat         {d['x_mean_hat']:.6g}",
        f"log_likelihood     {d['log_likelihood']:.6f}",
        f"r_squared          {d['r_squared']:.4f}",
        f"aicc               {d['aicc']:.4f}",
        f"iterations         {d['iterations']}",
        f"converged          {d['converged']}",
        f"final delta        {d['delta_trace'][-1]:.3g}",
        f"hook               {d['hook']}",
    ]
    return "\n".join(lines) + "\n"


def _curve_csv(report, traits: TraitTable) -> str:
    buf = io.StringIO()
    buf.write("kind,label,x,y\n")
    grid = np.linspace(float(np.min(traits.x)), float(np.max(traits.x)), 200)
    a, b = report.effective_intercept, report.effective_slope
    for xv in grid:
        buf.write(f"curve,,{float(xv)!r},{float(a + b * xv)!r}\n")
    for s, xv, yv in zip(traits.species, traits.x, traits.y):
        buf.write(f"data,{s},{float(xv)!r},{float(yv)!r}\n")
    return buf.getvalue()


def cmd_simulate(args) -> int:
    tree = _read_tree(args)
    params = OUOUParams(
        alpha=_resolve(args, "alpha", 1.0, float),
        sigma_y=_resolve(args, "sigma_y", 1.0, float),
        sigma_x=_resolve(args, "sigma_x", 1.0, float),
        b0=_resolve(args, "b0", 0.0, float),
        b1=_resolve(args, "b1", 1.0, float),
        x_a=_resolve(args, "x_anc", 0.0, float),
        y_a=_resolve(args, "y_anc", 0.0, float),
    )
    seed = _resolve(args, "seed", 0, int)
    step = _resolve(args, "step", None, float)

    if args.moments:
        paths = _resolve(args, "paths", 100_000, int)
        horizon = _resolve(args, "time", tree.depth, float)
        if horizon <= 0:
            raise ValueError("--time must be > 0")
        h = step if step is not None else horizon / 1000.0
        moments = mc_moments(params, horizon, paths, h, seed=seed)
        payload = {
            name: {"value": est.value, "se": est.se} for name, est in moments.items()
        }
        payload["_config"] = {"time": horizon, "paths": paths, "step": h, "seed": seed}
        _write(args.out, _json(payload))
        return _EXIT_OK

    out = simulate_tree(SimConfig(params=params, tree=tree, step=step, paths=1, seed=seed))
    buf = io.StringIO()
    buf.write("species,x,y\n")
    for label, xv, yv in zip(out.tip_labels, out.x[:, 0], out.y[:, 0]):
        buf.write(f"{label},{float(xv)!r},{float(yv)!r}\n")
    _write(args.out, buf.getvalue())
    return _EXIT_OK


def cmd_compare(args) -> int:
    tree = _read_tree(args)
    traits = TraitTable.from_csv(args.traits)
    hooks = _resolve_hooks(_resolve(args, "hooks", "ouou,flat", str))
    rows = compare_models(tree, traits, hooks, _fit_config(args))

    fmt = _resolve(args, "format", "text", str)
    if fmt == "json":
        payload = [
            {
                "model": r.name,
                "line": r.line,
                "r_squared": r.r_squared,
                "aicc": r.aicc,
                "delta_aicc": r.delta_aicc,
                "co_supported": r.co_supported,
                "converged": r.converged,
                "error": r.error,
            }
            for r in rows
        ]
        _write(args.out, _json(payload))
    elif fmt == "csv":
        buf = io.StringIO()
        buf.write("model,line,r_squared,aicc,delta_aicc,co_supported,converged,error\n")
        for r in rows:
            buf.write(
                f"{r.name},\"{r.line}\",{r.r_squared!r},{r.aicc!r},{r.delta_aicc!r},"
                f"{r.co_supported},{r.converged},{r.error or ''}\n"
            )
        _write(args.out, buf.getvalue())
    else:
        header = f"{'Model':<10} {'Regression Line':<28} {'r^2':>8} {'AICc':>12} {'dAICc':>8}  co-supported"
        lines = [header, "-" * len(header)]
        for r in rows:
            if r.error:
                lines.append(f"{r.name:<10} fit failed: {r.error}")
            else:
                lines.append(
                    f"{r.name:<10} {r.line:<28} {100 * r.r_squared:>7.1f}% {r.aicc:>12.4f} "
                    f"{r.delta_aicc:>8.2f}  {'yes' if r.co_supported else 'no'}"
                )
        _write(args.out, "\n".join(lines) + "\n")

    if any(r.error for r in rows) or not all(r.converged for r in rows):
        return _EXIT_NOCONV
    return _EXIT_OK


def cmd_validate(args) -> int:
    paths = _resolve(args, "paths", 200_000, int)
    seed = _resolve(args, "seed", 0, int)
    step = _resolve(args, "step", None, float)
    lines = []
    if paths < 10_000:
        lines.append(f"warning: only {paths} paths; checks have low statistical power")
    results = diagnostics.validate_suite(paths=paths, seed=seed, step=step)
    lines += [r.format() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    _write(args.out, "\n".join(lines) + "\n")
    return _EXIT_OK if n_fail == 0 else _EXIT_NOCONV


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "simulate": cmd_simulate,
        "compare": cmd_compare,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
