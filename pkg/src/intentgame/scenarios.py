"""Driving scenarios and the metrics used to judge them.

Every vehicle is a planar double integrator with state (lon, lat, v_lon,
v_lat) and controls (a_lon, a_lat).  Three scenes are provided: passing a
slow car that may cut in, a lane change in front of a car of uncertain speed,
and a merge into a middle lane with two uncertain neighbours.  Numeric
defaults live in ``DEFAULTS`` and can be overridden per call.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import GameInputError, SolverError
from .hypotheses import (
    LAT,
    LON,
    STATE_DIM,
    V_LON,
    AgentInit,
    Hypothesis,
    HypothesisSet,
    ReplicaIndex,
    SceneDescription,
    VehicleState,
    build_game,
    double_integrator,
    solo_game,
)
from .model import DynamicGame, GameTrajectory, evaluate_player_cost

LANE_WIDTH = 3.7

_COMMON = {
    "dt": 0.1,
    "horizon": 50,
    "lane_width": LANE_WIDTH,
    "ellipse_a": 10.0,
    "ellipse_b": 2.5,
    "control_weight": 1.0,
    "speed_weight": 0.5,
    "lane_weight": 0.0,
}

DEFAULTS = {
    "a": dict(_COMMON, ego_speed=20.0, ego_desired_speed=20.0,
              red_speed=15.0, red_desired_speed=15.0, red_gap=30.0),
    "b": dict(_COMMON, ego_speed=15.0, ego_desired_speed=15.0,
              red_speed=20.0, red_fast_speed=25.0, red_slow_speed=17.0, red_gap=-45.0),
    "c": dict(_COMMON, ego_speed=15.0, ego_desired_speed=15.0,
              red_speed=20.0, red_fast_speed=25.0, red_slow_speed=15.0, red_gap=-51.0,
              green_speed=15.0, green_desired_speed=15.0, green_gap=8.0),
}


def scenario_defaults(scenario: str) -> dict:
    try:
        return copy.deepcopy(DEFAULTS[scenario.lower()])
    except KeyError:
        raise GameInputError(f"unknown scenario {scenario!r}; expected one of a, b, c", "scenario") from None


def _params(scenario: str, overrides) -> dict:
    out = scenario_defaults(scenario)
    for key, value in dict(overrides or {}).items():
        if key not in out:
            raise GameInputError(f"unknown parameter {key!r} for scenario {scenario}", f"params.{key}")
        try:
            out[key] = type(out[key])(value)
        except (TypeError, ValueError):
            raise GameInputError(f"parameter {key!r} must be a number, got {value!r}", f"params.{key}") from None
    return out


def _check_p(p, name="p"):
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise GameInputError(f"probability {name}={p!r} is not a number", name) from None
    if not 0.0 <= p <= 1.0:
        raise GameInputError(f"probability {name}={p} outside [0, 1]", name)
    return p


def _scene(prm, ego, agents, lanes, ego_target=None):
    return SceneDescription(
        ego=ego,
        ego_desired_speed=prm["ego_desired_speed"],
        agents=tuple(agents),
        lane_centers=lanes,
        lane_width=prm["lane_width"],
        ego_target_lat=ego_target,
        ellipse_a=prm["ellipse_a"],
        ellipse_b=prm["ellipse_b"],
        horizon=int(prm["horizon"]),
        dt=prm["dt"],
        control_weight=prm["control_weight"],
        speed_weight=prm["speed_weight"],
        lane_weight=prm["lane_weight"],
    )


def scenario_passing(p: float, params=None) -> tuple[SceneDescription, HypothesisSet]:
    """Ego overtakes a slow car in the adjacent lane that may cut in.

    Ego drives in the left lane; the red car is ahead in the right lane.  With
    probability ``p`` red changes into the ego's lane by the end of the horizon.
    """
    p = _check_p(p)
    prm = _params("a", params)
    w = prm["lane_width"]
    lanes = (0.0, w)
    ego = VehicleState(0.0, w, prm["ego_speed"])
    red = VehicleState(prm["red_gap"], 0.0, prm["red_speed"])
    hyps = HypothesisSet({"red": (
        Hypothesis("lane_change", p, prm["red_desired_speed"], target_lat=w),
        Hypothesis("stay", 1.0 - p, prm["red_desired_speed"], target_lat=0.0),
    )})
    return _scene(prm, ego, [AgentInit("red", red)], lanes), hyps


def scenario_lane_change(p: float, params=None) -> tuple[SceneDescription, HypothesisSet]:
    """Ego moves to the left lane ahead of or behind a red car of uncertain speed.

    ``p`` is the probability that red wants to drive fast.  Both speed
    hypotheses end the horizon in red's own lane.
    """
    p = _check_p(p)
    prm = _params("b", params)
    w = prm["lane_width"]
    lanes = (0.0, w)
    ego = VehicleState(0.0, 0.0, prm["ego_speed"])
    red = VehicleState(prm["red_gap"], w, prm["red_speed"])
    hyps = HypothesisSet({"red": (
        Hypothesis("fast", p, prm["red_fast_speed"], target_lat=w),
        Hypothesis("moderate", 1.0 - p, prm["red_slow_speed"], target_lat=w),
    )})
    return _scene(prm, ego, [AgentInit("red", red)], lanes, ego_target=w), hyps


def scenario_double_lane_change(p1: float, p2: float, params=None) -> tuple[SceneDescription, HypothesisSet]:
    """Ego merges into the middle of three lanes.

    Red approaches from behind in the middle lane and is fast with probability
    ``p1``; green drives in the far lane and moves into the middle lane with
    probability ``p2``.
    """
    p1 = _check_p(p1, "p1")
    p2 = _check_p(p2, "p2")
    prm = _params("c", params)
    w = prm["lane_width"]
    lanes = (0.0, w, 2 * w)
    ego = VehicleState(0.0, 0.0, prm["ego_speed"])
    red = VehicleState(prm["red_gap"], w, prm["red_speed"])
    green = VehicleState(prm["green_gap"], 2 * w, prm["green_speed"])
    hyps = HypothesisSet({
        "red": (
            Hypothesis("fast", p1, prm["red_fast_speed"], target_lat=w),
            Hypothesis("slow", 1.0 - p1, prm["red_slow_speed"], target_lat=w),
        ),
        "green": (
            Hypothesis("lane_change", p2, prm["green_desired_speed"], target_lat=w),
            Hypothesis("stay", 1.0 - p2, prm["green_desired_speed"], target_lat=2 * w),
        ),
    })
    agents = [AgentInit("red", red), AgentInit("green", green)]
    return _scene(prm, ego, agents, lanes, ego_target=w), hyps


SCENARIOS = {"a": scenario_passing, "b": scenario_lane_change, "c": scenario_double_lane_change}


def build_scenario(scenario: str, p=None, p1=None, p2=None, params=None):
    """Scene, hypotheses, game and replica index for a scenario id."""
    key = scenario.lower()
    if key not in SCENARIOS:
        raise GameInputError(f"unknown scenario {scenario!r}; expected one of a, b, c", "scenario")
    if key == "c":
        if p1 is None or p2 is None:
            raise GameInputError("scenario c needs both p1 and p2", "p1")
        scene, hyps = scenario_double_lane_change(p1, p2, params)
    else:
        if p is None:
            raise GameInputError(f"scenario {key} needs p", "p")
        scene, hyps = SCENARIOS[key](p, params)
    game, index = build_game(scene, hyps)
    return scene, hyps, game, index


def _initial_state(scene: SceneDescription, info) -> VehicleState:
    if info.index == 0:
        return scene.ego
    return next(a.initial for a in scene.agents if a.name == info.agent)


def independent_plans(scene: SceneDescription, index: ReplicaIndex, settings=None) -> GameTrajectory:
    """Joint trajectory stacking every player's optimum when driving alone.

    Each vehicle keeps its own objective and lane constraints and ignores the
    others.  Used as the starting point of scenario solves: it is feasible for
    every lane constraint and usually close to the equilibrium of the
    vehicles that do not interact.
    """
    from .sqp import solve_gfne

    states, controls = [], []
    for info in index:
        sol = solve_gfne(solo_game(scene, info, _initial_state(scene, info)), settings=settings)
        if not sol.report.converged:
            raise SolverError(f"independent plan of {info.name} did not converge")
        states.append(sol.trajectory.states)
        controls.append(sol.trajectory.controls[0])
    return GameTrajectory(np.concatenate(states, axis=1), tuple(controls))


@dataclass(frozen=True)
class ScenarioRun:
    scene: SceneDescription
    hypotheses: HypothesisSet
    game: DynamicGame
    index: ReplicaIndex
    solution: object


def solve_scenario(scenario: str, p=None, p1=None, p2=None, params=None, settings=None,
                   init: str = "independent") -> ScenarioRun:
    """Build and solve a scenario.

    ``init`` selects the starting trajectory: ``"independent"`` (see
    :func:`independent_plans`), ``"zero"`` (zero-control rollout) or
    ``"straight"`` (every vehicle keeps its lane at its desired speed).
    """
    from .sqp import solve_gfne

    scene, hyps, game, index = build_scenario(scenario, p=p, p1=p1, p2=p2, params=params)
    if init == "independent":
        start = independent_plans(scene, index, settings)
    elif init == "zero":
        start = None
    elif init == "straight":
        start = straight_line_rollout(scene, index)
    else:
        raise GameInputError(f"unknown init {init!r}; expected independent, zero or straight", "init")
    return ScenarioRun(scene, hyps, game, index, solve_gfne(game, init=start, settings=settings))


def straight_line_rollout(scene: SceneDescription, index: ReplicaIndex) -> GameTrajectory:
    """Every vehicle in its starting lane, jumping to its desired speed after the first stage."""
    T = scene.horizon
    states = np.zeros((T + 1, STATE_DIM * len(index)))
    controls = []
    for info in index:
        x0 = _initial_state(scene, info)
        acc = np.zeros((T, 2))
        acc[0, 0] = (info.desired_speed - x0.v_lon) / scene.dt
        block = states[:, STATE_DIM * info.index:STATE_DIM * (info.index + 1)]
        block[0] = x0.as_array()
        A, B = double_integrator(scene.dt)
        for t in range(T):
            block[t + 1] = A @ block[t] + B @ acc[t]
        controls.append(acc)
    return GameTrajectory(states, tuple(controls))


# -- metrics ---------------------------------------------------------------


def ellipse_separation(traj: GameTrajectory, scene: SceneDescription, first: int, second: int) -> np.ndarray:
    """``(dlon / a)^2 + (dlat / b)^2 - 1`` between two vehicle blocks at every stage."""
    s = traj.states
    d_lon = s[:, STATE_DIM * first + LON] - s[:, STATE_DIM * second + LON]
    d_lat = s[:, STATE_DIM * first + LAT] - s[:, STATE_DIM * second + LAT]
    return (d_lon / scene.ellipse_a) ** 2 + (d_lat / scene.ellipse_b) ** 2 - 1.0


def vehicle_states(traj: GameTrajectory, block: int) -> np.ndarray:
    return traj.states[:, STATE_DIM * block:STATE_DIM * (block + 1)]


def merge_window(lat: np.ndarray, lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """Stages at which a lateral move is between ``lo`` and ``hi`` of its total extent.

    Returns every stage when the vehicle does not move laterally.
    """
    total = lat[-1] - lat[0]
    if abs(total) < 1e-9:
        return np.arange(lat.shape[0])
    frac = (lat - lat[0]) / total
    idx = np.flatnonzero((frac >= lo) & (frac <= hi))
    return idx if idx.size else np.arange(lat.shape[0])


@dataclass
class ScenarioMetrics:
    ego_min_speed: float
    ego_mean_speed: float
    ego_merge_speed: float
    ego_terminal_lane: int
    min_separation: dict
    player_cost: dict
    own_cost: dict
    solo_cost: dict = field(default_factory=dict)
    replica_deviation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ego_min_speed": self.ego_min_speed,
            "ego_mean_speed": self.ego_mean_speed,
            "ego_merge_speed": self.ego_merge_speed,
            "ego_terminal_lane": self.ego_terminal_lane,
            "min_separation": dict(self.min_separation),
            "player_cost": dict(self.player_cost),
            "own_cost": dict(self.own_cost),
            "solo_cost": dict(self.solo_cost),
            "replica_deviation": dict(self.replica_deviation),
        }


def _own_objective_cost(scene, index, traj, block):
    """Independent objective of one vehicle, evaluated on its own block."""
    from .hypotheses import independent_objective, _lane_reference

    info = index[block]
    init = _initial_state(scene, info)
    st, te = independent_objective(scene, info.state_offset, info.control_offset, info.desired_speed,
                                   _lane_reference(scene, init, info.target_lat))
    U = traj.joint_controls()
    T = traj.states.shape[0] - 1
    return float(sum(st.value(traj.states[t], U[t]) for t in range(T)) + te.value(traj.states[T], np.zeros(0)))


def solve_solo(scene: SceneDescription, index: ReplicaIndex, block: int, settings=None):
    """Optimal trajectory of player ``block`` driving alone."""
    from .sqp import solve_gfne

    info = index[block]
    game = solo_game(scene, info, _initial_state(scene, info))
    return game, solve_gfne(game, settings=settings)


def compute_metrics(traj: GameTrajectory, game: DynamicGame, scene: SceneDescription,
                    index: ReplicaIndex, solo: bool = True) -> ScenarioMetrics:
    """Recompute the scenario metrics from a trajectory.

    With ``solo`` set, each replica's solo optimum is solved and its cost and
    state distance to the joint solution are reported.
    """
    traj.check(game)
    ego = vehicle_states(traj, 0)
    speed = ego[:, V_LON]
    window = merge_window(ego[:, LAT])
    out = ScenarioMetrics(
        ego_min_speed=float(speed.min()),
        ego_mean_speed=float(speed.mean()),
        ego_merge_speed=float(speed[window].mean()),
        ego_terminal_lane=scene.nearest_lane(float(ego[-1, LAT])),
        min_separation={},
        player_cost={},
        own_cost={},
    )
    for info in index:
        out.player_cost[info.name] = evaluate_player_cost(game, traj, info.index)
        out.own_cost[info.name] = _own_objective_cost(scene, index, traj, info.index)
        if info.index == 0:
            continue
        out.min_separation[info.name] = float(ellipse_separation(traj, scene, 0, info.index).min())
        if solo:
            sgame, sol = solve_solo(scene, index, info.index)
            out.solo_cost[info.name] = evaluate_player_cost(sgame, sol.trajectory, 0)
            out.replica_deviation[info.name] = float(
                np.max(np.linalg.norm(vehicle_states(traj, info.index) - sol.trajectory.states, axis=1)))
    return out

