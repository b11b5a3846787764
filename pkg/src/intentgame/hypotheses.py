"""Multi-hypothesis games: one replica per intent hypothesis of each non-ego agent.

The ego pays its own objective plus, for every replica, that replica's
objective weighted by the odds ``p / (1 - p)`` of its hypothesis.  Collision
avoidance with the ego is a constraint of the replica only, and replicas of
different agents do not interact.  The ego's own constraints concern only its
own lane: a terminal lateral target when it changes lanes, otherwise (with
``ego_hold_lane``) a lateral equality holding its starting lane.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GameInputError
from .model import (
    ControlEffort,
    CostSum,
    DynamicGame,
    EllipseSeparation,
    LinearDynamics,
    Player,
    StateTracking,
    state_equality,
)

P_MIN = 1e-3
P_MAX = 1.0 - 1e-3

# per-vehicle state layout
LON, LAT, V_LON, V_LAT = range(4)
STATE_DIM = 4
CONTROL_DIM = 2


def odds_weight(p: float, p_min: float = P_MIN, p_max: float = P_MAX) -> float:
    """``p / (1 - p)`` with ``p`` clamped into ``[p_min, p_max]``."""
    if not (isinstance(p, (int, float, np.floating)) and math.isfinite(p)) or p < 0.0 or p > 1.0:
        raise GameInputError(f"probability {p!r} outside [0, 1]", "p")
    if p < p_min or p > p_max:
        clamped = min(max(p, p_min), p_max)
        warnings.warn(f"probability {p} clamped to {clamped}", RuntimeWarning, stacklevel=2)
        p = clamped
    return p / (1.0 - p)


@dataclass(frozen=True)
class VehicleState:
    lon: float
    lat: float
    v_lon: float
    v_lat: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.lon, self.lat, self.v_lon, self.v_lat], dtype=float)


@dataclass(frozen=True)
class Hypothesis:
    """One intent: a desired speed and optionally a terminal lateral target."""

    name: str
    probability: float
    desired_speed: float
    target_lat: float | None = None


@dataclass(frozen=True)
class HypothesisSet:
    """Categorical belief over hypotheses for every non-ego agent."""

    agents: dict

    def __post_init__(self):
        agents = {str(k): tuple(v) for k, v in dict(self.agents).items()}
        for name, hyps in agents.items():
            if not hyps:
                raise GameInputError(f"agent {name!r} needs at least one hypothesis", "hypotheses")
            for h in hyps:
                if not 0.0 <= h.probability <= 1.0:
                    raise GameInputError(f"probability {h.probability} of {name}/{h.name} outside [0, 1]",
                                         "hypotheses")
            total = sum(h.probability for h in hyps)
            if abs(total - 1.0) > 1e-9:
                raise GameInputError(f"probabilities of agent {name!r} sum to {total}, not 1", "hypotheses")
        object.__setattr__(self, "agents", agents)


@dataclass(frozen=True)
class AgentInit:
    name: str
    initial: VehicleState


@dataclass(frozen=True)
class SceneDescription:
    """Road, vehicles and cost parameters shared by every hypothesis."""

    ego: VehicleState
    ego_desired_speed: float
    agents: tuple
    lane_centers: tuple = (0.0, 3.7)
    lane_width: float = 3.7
    ego_target_lat: float | None = None
    ellipse_a: float = 10.0
    ellipse_b: float = 2.5
    horizon: int = 50
    dt: float = 0.1
    control_weight: float = 1.0
    speed_weight: float = 0.5
    lane_weight: float = 0.0
    ego_hold_lane: bool = True

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lane_centers", tuple(float(c) for c in self.lane_centers))
        if any(b <= a for a, b in zip(self.lane_centers, self.lane_centers[1:])):
            raise GameInputError("lane centers must be strictly increasing", "lane_centers")
        if self.dt <= 0:
            raise GameInputError("time step must be positive", "dt")
        if self.ellipse_a <= 0 or self.ellipse_b <= 0:
            raise GameInputError("ellipse semi-axes must be positive", "ellipse")
        if self.horizon < 1:
            raise GameInputError("horizon must be at least 1", "horizon")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names) or "ego" in names:
            raise GameInputError("agent names must be unique and differ from 'ego'", "agents")

    def nearest_lane(self, lat: float) -> int:
        return int(np.argmin([abs(lat - c) for c in self.lane_centers]))


@dataclass(frozen=True)
class PlayerInfo:
    index: int
    name: str
    agent: str
    hypothesis: str | None
    probability: float | None
    weight: float
    state_offset: int
    control_offset: int
    desired_speed: float
    target_lat: float | None


@dataclass(frozen=True)
class ReplicaIndex:
    players: tuple

    def __len__(self):
        return len(self.players)

    def __getitem__(self, i) -> PlayerInfo:
        return self.players[i]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.players]

    def find(self, agent: str, hypothesis: str) -> PlayerInfo:
        for p in self.players:
            if p.agent == agent and p.hypothesis == hypothesis:
                return p
        raise KeyError((agent, hypothesis))


def double_integrator(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``pos += v dt + a dt^2 / 2``, ``v += a dt`` for (lon, lat)."""
    A = np.eye(STATE_DIM)
    A[LON, V_LON] = dt
    A[LAT, V_LAT] = dt
    B = np.zeros((STATE_DIM, CONTROL_DIM))
    B[LON, 0] = B[LAT, 1] = 0.5 * dt * dt
    B[V_LON, 0] = B[V_LAT, 1] = dt
    return A, B


def independent_objective(scene: SceneDescription, state_offset: int, control_offset: int,
                          desired_speed: float, lane_ref: float | None = None) -> tuple[CostSum, CostSum]:
    """Control effort plus desired-speed tracking of one vehicle (stage, terminal)."""
    speed = StateTracking(state_offset + V_LON, desired_speed, scene.speed_weight)
    stage = [ControlEffort(control_offset, CONTROL_DIM, scene.control_weight), speed]
    terminal = [speed]
    if lane_ref is not None and scene.lane_weight > 0:
        lane = StateTracking(state_offset + LAT, lane_ref, scene.lane_weight)
        stage.append(lane)
        terminal.append(lane)
    return CostSum(tuple(stage)), CostSum(tuple(terminal))


def _lane_reference(scene, initial: VehicleState, target):
    """Lane center kept by a vehicle without a lane-change intent; ``None`` otherwise."""
    return None if target is not None else scene.lane_centers[scene.nearest_lane(initial.lat)]


def _own_constraints(scene, info: PlayerInfo, initial: VehicleState, state_dim: int) -> list:
    """Lane constraints a vehicle places on its own block."""
    T = scene.horizon
    lat = info.state_offset + LAT
    if info.target_lat is not None:
        return [state_equality(state_dim, lat, info.target_lat, [T], name=f"{info.name}_lane")]
    if info.index == 0 and scene.ego_hold_lane:
        return [state_equality(state_dim, lat, initial.lat, range(1, T + 1), name="ego_hold_lane")]
    return []


def build_game(scene: SceneDescription, hyps: HypothesisSet,
               exclude_politeness=()) -> tuple[DynamicGame, ReplicaIndex]:
    """Assemble the replica game.

    Players are ordered ego first, then the replicas of each agent in scene
    order and hypothesis order.  ``exclude_politeness`` lists replica names
    whose politeness term is left out of the ego objective.
    """
    scene_names = [a.name for a in scene.agents]
    if set(scene_names) != set(hyps.agents):
        raise GameInputError(
            f"scene agents {sorted(scene_names)} do not match hypothesis agents {sorted(hyps.agents)}",
            "hypotheses")
    T = scene.horizon
    A1, B1 = double_integrator(scene.dt)
    entries = [("ego", "ego", None, None, scene.ego, scene.ego_desired_speed, scene.ego_target_lat)]
    for a_idx, agent in enumerate(scene.agents):
        for k, h in enumerate(hyps.agents[agent.name]):
            entries.append((f"agent{a_idx + 2}_hyp{k + 1}", agent.name, h.name, h.probability,
                            agent.initial, h.desired_speed, h.target_lat))
    N = len(entries)
    n = STATE_DIM * N
    A = np.kron(np.eye(N), A1)
    Bs = []
    for i in range(N):
        B = np.zeros((n, CONTROL_DIM))
        B[STATE_DIM * i:STATE_DIM * (i + 1)] = B1
        Bs.append(B)
    x0 = np.concatenate([e[4].as_array() for e in entries])

    infos, objectives = [], []
    for i, (name, agent, hname, prob, init, v_des, target) in enumerate(entries):
        weight = 1.0 if prob is None else odds_weight(prob)
        infos.append(PlayerInfo(i, name, agent, hname, prob, weight, STATE_DIM * i, CONTROL_DIM * i,
                                v_des, target))
        objectives.append(independent_objective(scene, STATE_DIM * i, CONTROL_DIM * i, v_des,
                                                _lane_reference(scene, init, target)))

    ego_stage, ego_term = objectives[0]
    excluded = set(exclude_politeness)
    for info, (st, te) in zip(infos[1:], objectives[1:]):
        if info.name in excluded:
            continue
        ego_stage = ego_stage + st.scaled(info.weight)
        ego_term = ego_term + te.scaled(info.weight)

    stages = frozenset(range(T + 1))
    players = []
    for info, (st, te) in zip(infos, objectives):
        cons = _own_constraints(scene, info, entries[info.index][4], n)
        if info.index == 0:
            players.append(Player("ego", CONTROL_DIM, ego_stage, ego_term, tuple(cons)))
            continue
        cons.append(EllipseSeparation(first=(LON, LAT), second=(info.state_offset + LON, info.state_offset + LAT),
                                      a=scene.ellipse_a, b=scene.ellipse_b, stages=stages,
                                      name=f"{info.name}_collision"))
        players.append(Player(info.name, CONTROL_DIM, st, te, tuple(cons)))

    game = DynamicGame(LinearDynamics(A, tuple(Bs)), tuple(players), T, x0)
    return game, ReplicaIndex(tuple(infos))


def solo_game(scene: SceneDescription, info: PlayerInfo, initial: VehicleState) -> DynamicGame:
    """Single-vehicle game of one player driving alone.

    The vehicle keeps its own objective and lane constraints; for the ego the
    politeness terms are dropped together with every other vehicle.
    """
    T = scene.horizon
    A, B = double_integrator(scene.dt)
    st, te = independent_objective(scene, 0, 0, info.desired_speed,
                                   _lane_reference(scene, initial, info.target_lat))
    local = PlayerInfo(info.index, info.name, info.agent, info.hypothesis, info.probability, info.weight,
                       0, 0, info.desired_speed, info.target_lat)
    cons = _own_constraints(scene, local, initial, STATE_DIM)
    player = Player(info.name, CONTROL_DIM, st, te, tuple(cons))
    return DynamicGame(LinearDynamics(A, (B,)), (player,), T, initial.as_array())
