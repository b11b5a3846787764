"""Command-line front end: ``run``, ``sweep`` and ``check-kkt``.

Exit codes: 0 when every solve converged (or a stored solution certifies),
1 on input errors, 2 when a solve did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import GameInputError, SolverError
from .io import (
    OUTPUT_ENV,
    RunConfig,
    load_config,
    parse_grid,
    solution_from_dict,
    solution_to_dict,
    write_json,
    write_trajectory,
)
from .kkt import kkt_blocks, perturbation_slopes
from .plot import plot_overlay, plot_solution
from .scenarios import build_scenario, compute_metrics, solve_scenario

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


def _point_label(config: RunConfig) -> str:
    if config.scenario == "c":
        return f"p1={config.p1:g}, p2={config.p2:g}"
    return f"p={config.p:g}"


def _point_dirname(config: RunConfig) -> str:
    if config.scenario == "c":
        return f"p1_{config.p1:g}_p2_{config.p2:g}"
    return f"p_{config.p:g}"


def solve_point(config: RunConfig, out_dir: Path) -> dict:
    """Solve one configuration and write its files; returns the summary row."""
    out_dir.mkdir(parents=True, exist_ok=True)
    probs = config.probabilities()
    row = {"scenario": config.scenario, **probs}
    try:
        run = solve_scenario(config.scenario, params=config.params, settings=config.solve_settings(),
                             init=config.init, **probs)
    except SolverError as exc:
        report = {"converged": False, "error": str(exc), "minor_iterations": getattr(exc, "minor_iterations", None)}
        write_json(out_dir / "report.json", report)
        row.update({"converged": False, "error": str(exc)})
        return row
    sol = run.solution
    names = run.index.names
    ext = config.format
    write_trajectory(out_dir / f"trajectory.{ext}", sol.trajectory, names, run.scene.dt, ext)
    write_json(out_dir / "report.json", sol.report.to_dict())
    write_json(out_dir / "solution.json", solution_to_dict(sol, config, names))
    metrics = compute_metrics(sol.trajectory, run.game, run.scene, run.index).to_dict()
    metrics["kkt_residual"] = max(kkt_blocks(run.game, sol.trajectory, sol.policies, sol.multipliers).values())
    write_json(out_dir / "metrics.json", metrics)
    title = f"scenario {config.scenario.upper()}, {_point_label(config)}"
    (out_dir / "plot.svg").write_text(plot_solution(sol.trajectory, run.scene, run.index, title))
    row.update({
        "converged": sol.report.converged,
        "major_iterations": sol.report.major_iterations,
        "minor_iterations": sol.report.total_minor_iterations,
        "final_residual": sol.report.final_residual,
        "ego_min_speed": metrics["ego_min_speed"],
        "ego_merge_speed": metrics["ego_merge_speed"],
        "ego_terminal_lane": metrics["ego_terminal_lane"],
        "min_separation": min(metrics["min_separation"].values()),
    })
    return row


def _config_from_args(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    for name in ("scenario", "p", "p1", "p2", "out", "format", "seed", "init"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    if getattr(args, "grid", None):
        config.grid = parse_grid(args.grid, str(config.scenario).lower())
    return config.validate()


def cmd_run(args) -> int:
    config = _config_from_args(args)
    config.probabilities()
    row = solve_point(config, config.output_dir())
    _print_row(row)
    return EXIT_OK if row["converged"] else EXIT_NONCONVERGED


def _sweep_worker(item):
    config, out_dir = item
    return solve_point(config, out_dir)


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    if not config.grid:
        raise GameInputError("sweep needs a nonempty grid", "grid")
    out = config.output_dir()
    items = []
    for point in config.grid:
        if config.scenario == "c":
            cfg = replace(config, p=None, p1=point[0], p2=point[1], grid=[])
        else:
            cfg = replace(config, p=point, p1=None, p2=None, grid=[])
        items.append((cfg, out / _point_dirname(cfg)))
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_sweep_worker, items))
    else:
        rows = [_sweep_worker(item) for item in items]
    out.mkdir(parents=True, exist_ok=True)
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    if config.format == "json":
        write_json(out / "summary.json", rows)
    else:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    runs = []
    for (cfg, point_dir), row in zip(items, rows):
        sol_path = point_dir / "solution.json"
        if row.get("converged") and sol_path.exists():
            _, traj, _, _ = solution_from_dict(json.loads(sol_path.read_text()))
            runs.append((_point_label(cfg), traj))
    if runs:
        scene, _, _, index = build_scenario(config.scenario, params=config.params, **items[0][0].probabilities())
        title = f"scenario {config.scenario.upper()} sweep"
        (out / "overlay.svg").write_text(plot_overlay(runs, scene, index, title))
    for row in rows:
        _print_row(row)
    return EXIT_OK if all(r.get("converged") for r in rows) else EXIT_NONCONVERGED


def cmd_check_kkt(args) -> int:
    path = Path(args.solution)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GameInputError(f"cannot read solution: {exc}", str(path)) from None
    config, traj, pol, mult = solution_from_dict(doc)
    _, _, game, _ = build_scenario(config.scenario, params=config.params, **config.probabilities())
    blocks = kkt_blocks(game, traj, pol, mult)
    residual = max(blocks.values())
    tol = config.solve_settings().kkt_tolerance
    out = {"kkt_residual": residual, "tolerance": tol, "certified": residual <= tol, "blocks": blocks}
    if args.perturbation:
        seed = config.seed if args.seed is None else args.seed
        slopes = perturbation_slopes(game, traj, pol, mult, np.random.default_rng(seed))
        out["perturbation_slopes"] = {str(k): v for k, v in slopes.items()}
    print(json.dumps(out, indent=1, sort_keys=True))
    return EXIT_OK if residual <= tol else EXIT_NONCONVERGED


def _print_row(row: dict) -> None:
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intentgame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", choices=("a", "b", "c"), type=str.lower)
        p.add_argument("--p", type=str, help="probability of the first hypothesis (scenarios a, b)")
        p.add_argument("--p1", type=str, help="probability that red is fast (scenario c)")
        p.add_argument("--p2", type=str, help="probability that green changes lanes (scenario c)")
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./out)")
        p.add_argument("--format", choices=("csv", "json"), help="trajectory and summary format")
        p.add_argument("--init", choices=("independent", "zero", "straight"), help="starting trajectory")
        p.add_argument("--seed", type=int, help="seed of randomized checks")

    run = sub.add_parser("run", help="solve one configuration")
    common(run)
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", help="solve a grid of probabilities")
    common(sweep)
    sweep.add_argument("--grid", help="comma-separated probabilities; p1:p2 pairs for scenario c")
    sweep.add_argument("--jobs", type=int, help="worker processes")
    sweep.set_defaults(func=cmd_sweep)
    check = sub.add_parser("check-kkt", help="re-certify a stored solution")
    check.add_argument("solution", help="solution.json written by run or sweep")
    check.add_argument("--seed", type=int, help="seed of the perturbation directions")
    check.add_argument("--perturbation", action="store_true", help="also run the Nash perturbation test")
    check.set_defaults(func=cmd_check_kkt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except GameInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
