"""Run configuration, trajectory and solution files.

Trajectories are written as CSV or JSON with one row per stage: time, then
for every player ``lon, lat, vlon, vlat, alon, alat``.  The terminal stage has
no control and leaves the acceleration cells empty (``null`` in JSON).
Numbers are written with ``repr`` so a file reads back bit-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import GameInputError
from .hypotheses import CONTROL_DIM, STATE_DIM
from .model import AffinePolicySet, GameTrajectory, SolutionMultipliers
from .scenarios import scenario_defaults
from .sqp import SolveSettings

OUTPUT_ENV = "INTENTGAME_OUT"
COLUMNS = ("lon", "lat", "vlon", "vlat", "alon", "alat")
FORMATS = ("csv", "json")
INITS = ("independent", "zero", "straight")


@dataclass
class RunConfig:
    """Everything a ``run`` or ``sweep`` needs.

    ``grid`` holds probabilities for scenarios a and b and ``[p1, p2]``
    pairs for scenario c.
    """

    scenario: str = "a"
    p: float | None = None
    p1: float | None = None
    p2: float | None = None
    grid: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    init: str = "independent"
    out: str | None = None
    format: str = "csv"
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "RunConfig":
        self.scenario = str(self.scenario).lower()
        if self.scenario not in ("a", "b", "c"):
            raise GameInputError(f"unknown scenario {self.scenario!r}; expected a, b or c", "scenario")
        for name in ("p", "p1", "p2"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, _probability(value, name))
        self.grid = [_grid_point(self.scenario, g, f"grid[{k}]") for k, g in enumerate(self.grid)]
        if not isinstance(self.params, dict):
            raise GameInputError("must be a mapping", "params")
        defaults = scenario_defaults(self.scenario)
        for key, value in self.params.items():
            if key not in defaults:
                raise GameInputError(f"unknown scene parameter for scenario {self.scenario}", f"params.{key}")
            if not _is_number(value):
                raise GameInputError(f"must be a number, got {value!r}", f"params.{key}")
        self.solve_settings()
        if self.init not in INITS:
            raise GameInputError(f"must be one of {', '.join(INITS)}", "init")
        if self.format not in FORMATS:
            raise GameInputError(f"must be csv or json, got {self.format!r}", "format")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise GameInputError(f"must be an integer, got {self.seed!r}", "seed")
        if not isinstance(self.jobs, int) or isinstance(self.jobs, bool) or self.jobs < 1:
            raise GameInputError(f"must be a positive integer, got {self.jobs!r}", "jobs")
        return self

    def solve_settings(self) -> SolveSettings:
        if not isinstance(self.settings, dict):
            raise GameInputError("must be a mapping", "settings")
        known = {f.name: f for f in fields(SolveSettings)}
        kwargs = {}
        for key, value in self.settings.items():
            if key not in known:
                raise GameInputError("unknown solver setting", f"settings.{key}")
            default = getattr(SolveSettings(), key)
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise GameInputError(f"must be true or false, got {value!r}", f"settings.{key}")
            elif isinstance(default, int):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise GameInputError(f"must be an integer, got {value!r}", f"settings.{key}")
            elif not _is_number(value):
                raise GameInputError(f"must be a number, got {value!r}", f"settings.{key}")
            kwargs[key] = value
        return SolveSettings(**kwargs)

    def probabilities(self) -> dict:
        """Probability keyword arguments of a single run."""
        if self.scenario == "c":
            if self.p1 is None or self.p2 is None:
                raise GameInputError("scenario c needs both p1 and p2", "p1" if self.p1 is None else "p2")
            return {"p1": self.p1, "p2": self.p2}
        if self.p is None:
            raise GameInputError(f"scenario {self.scenario} needs p", "p")
        return {"p": self.p}

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUTPUT_ENV) or "out")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _probability(value, name):
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise GameInputError(f"probability {value!r} is not a number", name) from None
    if not _is_number(value):
        raise GameInputError(f"probability {value!r} is not a number", name)
    if not 0.0 <= value <= 1.0:
        raise GameInputError(f"probability {value} outside [0, 1]", name)
    return float(value)


def _grid_point(scenario, value, name):
    if scenario == "c":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise GameInputError(f"scenario c grid points are [p1, p2] pairs, got {value!r}", name)
        return [_probability(value[0], name), _probability(value[1], name)]
    return _probability(value, name)


def parse_grid(text: str, scenario: str) -> list:
    """Grid from a command-line string.

    ``"0.1,0.5,0.9"`` for scenarios a and b; ``"0.99:0.01,0.01:0.99"`` for c.
    """
    points = [s.strip() for s in text.split(",") if s.strip()]
    if not points:
        raise GameInputError("empty grid", "grid")
    if scenario == "c":
        out = []
        for s in points:
            parts = s.split(":")
            if len(parts) != 2:
                raise GameInputError(f"scenario c grid points are p1:p2, got {s!r}", "grid")
            out.append(parts)
        return out
    return points


def load_config(path) -> RunConfig:
    """Read a YAML run configuration.

    Syntax errors are reported with their line; unknown or ill-typed keys
    with their dotted field name.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GameInputError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else str(path)
        raise GameInputError(str(getattr(exc, "problem", exc)), f"{path.name} {where}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise GameInputError("top level must be a mapping", path.name)
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise GameInputError("unknown config key", str(key))
    return RunConfig(**data)


def config_schema() -> dict:
    """Every config key with its default value, including scene and solver defaults."""
    return {
        "scenario": "a",
        "p": None,
        "p1": None,
        "p2": None,
        "grid": [],
        "init": "independent",
        "out": None,
        "format": "csv",
        "seed": 0,
        "jobs": 1,
        "params": {s: scenario_defaults(s) for s in ("a", "b", "c")},
        "settings": {f.name: getattr(SolveSettings(), f.name) for f in fields(SolveSettings)},
    }


# -- trajectories ------------------------------------------------------------


def trajectory_columns(names) -> list[str]:
    return ["time"] + [f"{name}.{col}" for name in names for col in COLUMNS]


def write_trajectory(path, traj: GameTrajectory, names, dt: float, fmt: str = "csv") -> None:
    """Write ``traj`` in the per-stage layout described in the module docstring."""
    names = list(names)
    if len(names) != len(traj.controls) or traj.states.shape[1] != STATE_DIM * len(names):
        raise GameInputError("one name per vehicle block required", "names")
    T = traj.horizon
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trajectory_columns(names))
            w.writerow(["#dt", repr(float(dt))] + [""] * (len(names) * len(COLUMNS) - 1))
            for t in range(T + 1):
                row = [repr(float(t * dt))]
                for i in range(len(names)):
                    row += [repr(float(v)) for v in traj.states[t, STATE_DIM * i:STATE_DIM * (i + 1)]]
                    row += [repr(float(v)) for v in traj.controls[i][t]] if t < T else [""] * CONTROL_DIM
                w.writerow(row)
    elif fmt == "json":
        doc = {"dt": float(dt), "time": [float(t * dt) for t in range(T + 1)], "players": {}}
        for i, name in enumerate(names):
            block = traj.states[:, STATE_DIM * i:STATE_DIM * (i + 1)]
            entry = {col: [float(v) for v in block[:, k]] for k, col in enumerate(COLUMNS[:STATE_DIM])}
            for k, col in enumerate(COLUMNS[STATE_DIM:]):
                entry[col] = [float(v) for v in traj.controls[i][:, k]] + [None]
            doc["players"][name] = entry
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise GameInputError(f"must be csv or json, got {fmt!r}", "format")


def read_trajectory(path) -> tuple[GameTrajectory, list[str], float]:
    """Inverse of :func:`write_trajectory`; the format follows the file suffix."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        names = list(doc["players"])
        blocks, controls = [], []
        for name in names:
            e = doc["players"][name]
            blocks.append(np.column_stack([np.array(e[c], dtype=float) for c in COLUMNS[:STATE_DIM]]))
            controls.append(np.column_stack([np.array(e[c][:-1], dtype=float) for c in COLUMNS[STATE_DIM:]]))
        return GameTrajectory(np.concatenate(blocks, axis=1), tuple(controls)), names, float(doc["dt"])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, meta, body = rows[0], rows[1], rows[2:]
    if header[0] != "time" or (len(header) - 1) % len(COLUMNS):
        raise GameInputError("not a trajectory file", str(path))
    names = [h.rsplit(".", 1)[0] for h in header[1::len(COLUMNS)]]
    data = [[float(v) if v else math.nan for v in row[1:]] for row in body]
    arr = np.array(data, dtype=float).reshape(len(body), len(names), len(COLUMNS))
    states = arr[:, :, :STATE_DIM].reshape(len(body), -1)
    controls = tuple(arr[:-1, i, STATE_DIM:].copy() for i in range(len(names)))
    return GameTrajectory(states, controls), names, float(meta[1])


# -- solutions ---------------------------------------------------------------


def solution_to_dict(solution, config: RunConfig, names) -> dict:
    """Trajectory, policies, multipliers and report of a solve, with the config that produced it."""
    traj, pol, mult = solution.trajectory, solution.policies, solution.multipliers
    return {
        "config": config.to_dict(),
        "names": list(names),
        "states": traj.states.tolist(),
        "controls": [c.tolist() for c in traj.controls],
        "gains": [g.tolist() for g in pol.gains],
        "offsets": [k.tolist() for k in pol.offsets],
        "multipliers": {
            "dynamics": [d.tolist() for d in mult.dynamics],
            "eq": [[v.tolist() for v in per] for per in mult.eq],
            "ineq": [[v.tolist() for v in per] for per in mult.ineq],
        },
        "report": solution.report.to_dict(),
    }


def solution_from_dict(doc: dict):
    """``(config, trajectory, policies, multipliers)`` from :func:`solution_to_dict` output."""
    try:
        config = RunConfig(**doc["config"]).validate()
        traj = GameTrajectory(np.array(doc["states"], dtype=float),
                              tuple(np.array(c, dtype=float).reshape(-1, CONTROL_DIM) for c in doc["controls"]))
        n = traj.states.shape[1]
        T = traj.horizon
        pol = AffinePolicySet(tuple(np.array(g, dtype=float).reshape(T, -1, n) for g in doc["gains"]),
                              tuple(np.array(k, dtype=float).reshape(T, -1) for k in doc["offsets"]))
        m = doc["multipliers"]
        mult = SolutionMultipliers(
            tuple(np.array(d, dtype=float).reshape(T, n) for d in m["dynamics"]),
            tuple(tuple(np.array(v, dtype=float) for v in per) for per in m["eq"]),
            tuple(tuple(np.array(v, dtype=float) for v in per) for per in m["ineq"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GameInputError(f"malformed solution file ({exc})", "solution") from None
    return config, traj, pol, mult


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
