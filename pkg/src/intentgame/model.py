"""Constrained discrete-time dynamic games: data types, evaluation and derivatives.

A game has ``N`` players acting on a shared state ``x_t`` through private
controls ``u^i_t``.  Player ``i`` pays

    sum_{t<T} l^i(x_t, u_t) + l^i_T(x_T)

subject to the shared dynamics and its own constraints ``h^i_t(x_t, u^i_t) = 0``
and ``g^i_t(x_t, u^i_t) >= 0`` (terminal blocks depend on ``x_T`` only).

Costs and constraints are drawn from a small catalog of primitives with
closed-form derivatives.  Stage costs act on the joint vector
``z = (x, u^1, ..., u^N)``; constraints of player ``i`` see only ``(x, u^i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .errors import DomainError, GameInputError

Array = npt.NDArray[np.float64]


def _frozen(a, ndim: int | None = None) -> Array:
    out = np.array(a, dtype=float)
    if ndim is not None and out.ndim != ndim:
        raise GameInputError(f"expected a {ndim}-d array, got shape {out.shape}")
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Cost primitives
# ---------------------------------------------------------------------------


class CostTerm:
    """Base class for a twice-differentiable cost term of ``(x, u)``.

    ``u`` is the joint control vector of all players (empty at the terminal
    stage).  Gradients and Hessians are taken with respect to ``z = (x, u)``.
    """

    def value(self, x: Array, u: Array) -> float:
        raise NotImplementedError

    def gradient(self, x: Array, u: Array) -> Array:
        raise NotImplementedError

    def hessian(self, x: Array, u: Array) -> Array:
        raise NotImplementedError

    def scaled(self, factor: float) -> "CostTerm":
        raise NotImplementedError

    def uses_controls(self, state_dim=None) -> bool:
        return False


@dataclass(frozen=True)
class QuadraticForm(CostTerm):
    """``0.5 z'Hz + g'z + c`` over the joint vector ``z = (x, u)``."""

    hess: Array
    grad: Array | None = None
    const: float = 0.0

    def __post_init__(self):
        h = _frozen(self.hess, 2)
        if h.shape[0] != h.shape[1]:
            raise GameInputError("quadratic form must be square", "hess")
        object.__setattr__(self, "hess", _frozen(0.5 * (h + h.T)))
        g = np.zeros(h.shape[0]) if self.grad is None else self.grad
        g = _frozen(g, 1)
        if g.shape[0] != h.shape[0]:
            raise GameInputError("gradient length does not match Hessian", "grad")
        object.__setattr__(self, "grad", g)

    def _z(self, x, u):
        z = np.concatenate([x, u])
        if z.shape[0] != self.hess.shape[0]:
            raise GameInputError(
                f"quadratic form has dimension {self.hess.shape[0]}, got z of length {z.shape[0]}"
            )
        return z

    def value(self, x, u):
        z = self._z(x, u)
        return float(0.5 * z @ self.hess @ z + self.grad @ z + self.const)

    def gradient(self, x, u):
        z = self._z(x, u)
        return self.hess @ z + self.grad

    def hessian(self, x, u):
        self._z(x, u)
        return np.array(self.hess)

    def scaled(self, factor):
        return QuadraticForm(factor * self.hess, factor * self.grad, factor * self.const)

    def uses_controls(self, state_dim=None):
        return state_dim is None or self.hess.shape[0] > state_dim


@dataclass(frozen=True)
class ControlEffort(CostTerm):
    """``weight * ||u[offset:offset+dim]||^2`` on a slice of the joint control."""

    offset: int
    dim: int
    weight: float = 1.0

    def value(self, x, u):
        s = u[self.offset:self.offset + self.dim]
        return float(self.weight * s @ s)

    def gradient(self, x, u):
        g = np.zeros(x.shape[0] + u.shape[0])
        start = x.shape[0] + self.offset
        g[start:start + self.dim] = 2.0 * self.weight * u[self.offset:self.offset + self.dim]
        return g

    def hessian(self, x, u):
        nz = x.shape[0] + u.shape[0]
        h = np.zeros((nz, nz))
        start = x.shape[0] + self.offset
        idx = np.arange(start, start + self.dim)
        h[idx, idx] = 2.0 * self.weight
        return h

    def scaled(self, factor):
        return ControlEffort(self.offset, self.dim, factor * self.weight)

    def uses_controls(self, state_dim=None):
        return True


@dataclass(frozen=True)
class StateTracking(CostTerm):
    """``weight * (x[index] - reference)^2``, e.g. speed or lane-center tracking."""

    index: int
    reference: float
    weight: float = 1.0

    def value(self, x, u):
        d = x[self.index] - self.reference
        return float(self.weight * d * d)

    def gradient(self, x, u):
        g = np.zeros(x.shape[0] + u.shape[0])
        g[self.index] = 2.0 * self.weight * (x[self.index] - self.reference)
        return g

    def hessian(self, x, u):
        nz = x.shape[0] + u.shape[0]
        h = np.zeros((nz, nz))
        h[self.index, self.index] = 2.0 * self.weight
        return h

    def scaled(self, factor):
        return StateTracking(self.index, self.reference, factor * self.weight)


@dataclass(frozen=True)
class CostSum:
    """Sum of cost terms; the empty sum is identically zero."""

    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def value(self, x, u) -> float:
        return float(sum(term.value(x, u) for term in self.terms))

    def gradient(self, x, u) -> Array:
        g = np.zeros(x.shape[0] + u.shape[0])
        for term in self.terms:
            g += term.gradient(x, u)
        return g

    def hessian(self, x, u) -> Array:
        nz = x.shape[0] + u.shape[0]
        h = np.zeros((nz, nz))
        for term in self.terms:
            h += term.hessian(x, u)
        return h

    def scaled(self, factor: float) -> "CostSum":
        return CostSum(tuple(term.scaled(factor) for term in self.terms))

    def __add__(self, other: "CostSum") -> "CostSum":
        return CostSum(self.terms + other.terms)


# ---------------------------------------------------------------------------
# Constraint primitives
# ---------------------------------------------------------------------------


class Constraint:
    """A block of constraint rows owned by one player.

    Rows are functions of ``(x, u_i)`` where ``u_i`` is the owner's control
    (empty at the terminal stage).  ``kind`` is ``"eq"`` (rows == 0) or
    ``"ineq"`` (rows >= 0).  ``stages`` lists the stage indices ``0..T`` at
    which the block is imposed; ``T`` denotes the terminal stage.
    """

    name: str
    kind: str
    stages: frozenset
    rows: int

    def value(self, x: Array, ui: Array) -> Array:
        raise NotImplementedError

    def jacobian(self, x: Array, ui: Array) -> tuple[Array, Array]:
        raise NotImplementedError

    def hessian(self, x: Array, ui: Array, weights: Array) -> Array:
        """Hessian of ``weights @ value`` with respect to ``(x, u_i)``."""
        raise NotImplementedError

    def uses_controls(self) -> bool:
        return False


def _check_kind(kind):
    if kind not in ("eq", "ineq"):
        raise GameInputError(f"constraint kind must be 'eq' or 'ineq', got {kind!r}", "kind")


@dataclass(frozen=True)
class AffineConstraint(Constraint):
    """Rows ``E x + F u_i + e``."""

    E: Array
    e: Array
    kind: str
    stages: frozenset
    F: Array | None = None
    name: str = "affine"

    def __post_init__(self):
        _check_kind(self.kind)
        E = _frozen(self.E, 2)
        e = _frozen(self.e, 1)
        if e.shape[0] != E.shape[0]:
            raise GameInputError("offset length does not match row count", "e")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)
        if self.F is not None:
            F = _frozen(self.F, 2)
            if F.shape[0] != E.shape[0]:
                raise GameInputError("control block row count mismatch", "F")
            object.__setattr__(self, "F", F)
        object.__setattr__(self, "stages", frozenset(int(s) for s in self.stages))

    @property
    def rows(self):
        return self.E.shape[0]

    def uses_controls(self):
        return self.F is not None and bool(np.any(self.F))

    def value(self, x, ui):
        out = self.E @ x + self.e
        if self.F is not None and ui.shape[0]:
            out = out + self.F @ ui
        return out

    def jacobian(self, x, ui):
        if self.F is not None and ui.shape[0]:
            Ju = np.array(self.F)
        else:
            Ju = np.zeros((self.rows, ui.shape[0]))
        return np.array(self.E), Ju

    def hessian(self, x, ui, weights):
        nz = x.shape[0] + ui.shape[0]
        return np.zeros((nz, nz))


def state_equality(state_dim: int, index: int, target: float, stages, name: str = "state_target"):
    """Single affine equality row ``x[index] - target = 0``."""
    E = np.zeros((1, state_dim))
    E[0, index] = 1.0
    return AffineConstraint(E=E, e=np.array([-target]), kind="eq", stages=frozenset(stages), name=name)


@dataclass(frozen=True)
class EllipseSeparation(Constraint):
    """``(d_lon / a)^2 + (d_lat / b)^2 - 1 >= 0`` between two planar positions.

    ``first`` and ``second`` are ``(lon_index, lat_index)`` pairs into the
    joint state.
    """

    first: tuple
    second: tuple
    a: float
    b: float
    stages: frozenset
    name: str = "ellipse"
    kind: str = "ineq"

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise GameInputError("ellipse semi-axes must be positive", "a/b")
        object.__setattr__(self, "stages", frozenset(int(s) for s in self.stages))
        object.__setattr__(self, "first", tuple(int(i) for i in self.first))
        object.__setattr__(self, "second", tuple(int(i) for i in self.second))

    rows = 1

    def _delta(self, x):
        return (x[self.first[0]] - x[self.second[0]], x[self.first[1]] - x[self.second[1]])

    def value(self, x, ui):
        dlon, dlat = self._delta(x)
        return np.array([(dlon / self.a) ** 2 + (dlat / self.b) ** 2 - 1.0])

    def jacobian(self, x, ui):
        dlon, dlat = self._delta(x)
        Jx = np.zeros((1, x.shape[0]))
        glon = 2.0 * dlon / self.a ** 2
        glat = 2.0 * dlat / self.b ** 2
        Jx[0, self.first[0]] += glon
        Jx[0, self.second[0]] -= glon
        Jx[0, self.first[1]] += glat
        Jx[0, self.second[1]] -= glat
        return Jx, np.zeros((1, ui.shape[0]))

    def hessian(self, x, ui, weights):
        nz = x.shape[0] + ui.shape[0]
        h = np.zeros((nz, nz))
        w = float(weights[0])
        for k, scale in ((0, 2.0 / self.a ** 2), (1, 2.0 / self.b ** 2)):
            i, j = self.first[k], self.second[k]
            h[i, i] += w * scale
            h[j, j] += w * scale
            h[i, j] -= w * scale
            h[j, i] -= w * scale
        return h


@dataclass(frozen=True)
class DistanceSeparation(Constraint):
    """``||p_first - p_second|| - radius >= 0``; not differentiable at coincidence."""

    first: tuple
    second: tuple
    radius: float
    stages: frozenset
    name: str = "distance"
    kind: str = "ineq"

    def __post_init__(self):
        object.__setattr__(self, "stages", frozenset(int(s) for s in self.stages))
        object.__setattr__(self, "first", tuple(int(i) for i in self.first))
        object.__setattr__(self, "second", tuple(int(i) for i in self.second))

    rows = 1

    def _delta(self, x):
        return np.array([x[i] - x[j] for i, j in zip(self.first, self.second)])

    def value(self, x, ui):
        return np.array([np.linalg.norm(self._delta(x)) - self.radius])

    def jacobian(self, x, ui):
        d = self._delta(x)
        r = np.linalg.norm(d)
        if r == 0.0:
            raise DomainError("distance gradient undefined at coincident positions", constraint=self.name)
        Jx = np.zeros((1, x.shape[0]))
        for k, (i, j) in enumerate(zip(self.first, self.second)):
            Jx[0, i] += d[k] / r
            Jx[0, j] -= d[k] / r
        return Jx, np.zeros((1, ui.shape[0]))

    def hessian(self, x, ui, weights):
        d = self._delta(x)
        r = np.linalg.norm(d)
        if r == 0.0:
            raise DomainError("distance Hessian undefined at coincident positions", constraint=self.name)
        local = (np.eye(len(d)) - np.outer(d, d) / r ** 2) / r
        nz = x.shape[0] + ui.shape[0]
        h = np.zeros((nz, nz))
        sel = np.zeros((len(d), nz))
        for k, (i, j) in enumerate(zip(self.first, self.second)):
            sel[k, i] = 1.0
            sel[k, j] = -1.0
        h += float(weights[0]) * sel.T @ local @ sel
        return h


# ---------------------------------------------------------------------------
# Game containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Player:
    name: str
    control_dim: int
    stage_cost: CostSum = CostSum()
    terminal_cost: CostSum = CostSum()
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))


@dataclass(frozen=True)
class LinearDynamics:
    """Stagewise-affine dynamics ``x_{t+1} = A x_t + sum_i B^i u^i_t + c``.

    ``A``, each ``B^i`` and ``c`` may carry a leading stage axis to make the
    map time-varying.
    """

    A: Array
    B: tuple
    c: Array | None = None

    def __post_init__(self):
        A = _frozen(self.A)
        if A.ndim not in (2, 3):
            raise GameInputError("A must be 2-d or stage-indexed 3-d", "A")
        object.__setattr__(self, "A", A)
        B = tuple(_frozen(b) for b in self.B)
        object.__setattr__(self, "B", B)
        n = A.shape[-1]
        c = np.zeros(n) if self.c is None else self.c
        object.__setattr__(self, "c", _frozen(c))
        for i, b in enumerate(B):
            if b.shape[-2] != n:
                raise GameInputError(f"B[{i}] has {b.shape[-2]} rows, expected {n}", "B")

    @property
    def state_dim(self) -> int:
        return self.A.shape[-1]

    def at(self, t: int):
        A = self.A[t] if self.A.ndim == 3 else self.A
        B = [b[t] if b.ndim == 3 else b for b in self.B]
        c = self.c[t] if self.c.ndim == 2 else self.c
        return A, B, c

    def step(self, t: int, x: Array, controls: Sequence[Array]) -> Array:
        A, B, c = self.at(t)
        out = A @ x + c
        for b, u in zip(B, controls):
            out = out + b @ u
        return out


@dataclass(frozen=True)
class DynamicGame:
    """The full game: dynamics, players, horizon and initial state."""

    dynamics: LinearDynamics
    players: tuple
    horizon: int
    initial_state: Array

    def __post_init__(self):
        object.__setattr__(self, "players", tuple(self.players))
        object.__setattr__(self, "initial_state", _frozen(self.initial_state, 1))
        if self.horizon < 1:
            raise GameInputError("horizon must be at least 1", "horizon")
        if not self.players:
            raise GameInputError("a game needs at least one player", "players")
        n = self.dynamics.state_dim
        if self.initial_state.shape[0] != n:
            raise GameInputError(
                f"initial state has length {self.initial_state.shape[0]}, expected {n}", "initial_state")
        if len(self.dynamics.B) != len(self.players):
            raise GameInputError("one input matrix per player required", "dynamics.B")
        for i, (p, b) in enumerate(zip(self.players, self.dynamics.B)):
            if b.shape[-1] != p.control_dim:
                raise GameInputError(
                    f"B[{i}] has {b.shape[-1]} columns but player {p.name!r} has {p.control_dim} controls",
                    "dynamics.B")
            for term in p.terminal_cost.terms:
                if term.uses_controls(n):
                    raise GameInputError(f"terminal cost of {p.name!r} depends on controls", "terminal_cost")
            for con in p.constraints:
                bad = [s for s in con.stages if s < 0 or s > self.horizon]
                if bad:
                    raise GameInputError(f"{con.name!r} refers to stages {bad} outside 0..{self.horizon}",
                                         "constraints")
                if self.horizon in con.stages and con.uses_controls():
                    raise GameInputError(f"{con.name!r} uses controls at the terminal stage", "constraints")

    @property
    def num_players(self) -> int:
        return len(self.players)

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dims(self) -> list[int]:
        return [p.control_dim for p in self.players]

    @property
    def control_offsets(self) -> list[int]:
        return [int(v) for v in np.concatenate([[0], np.cumsum(self.control_dims)[:-1]])]

    @property
    def total_control_dim(self) -> int:
        return int(sum(self.control_dims))

    def control_slice(self, i: int) -> slice:
        off = self.control_offsets[i]
        return slice(off, off + self.control_dims[i])

    def stage_constraints(self, i: int, t: int, kind: str) -> list:
        return [c for c in self.players[i].constraints if c.kind == kind and t in c.stages]

    def row_count(self, i: int, t: int, kind: str) -> int:
        return sum(c.rows for c in self.stage_constraints(i, t, kind))


@dataclass(frozen=True)
class GameTrajectory:
    """States ``x_0..x_T`` and per-player controls ``u^i_0..u^i_{T-1}``."""

    states: Array
    controls: tuple

    def __post_init__(self):
        states = _frozen(self.states, 2)
        controls = tuple(_frozen(c, 2) for c in self.controls)
        T = states.shape[0] - 1
        for i, c in enumerate(controls):
            if c.shape[0] != T:
                raise GameInputError(f"player {i} has {c.shape[0]} controls for {T} stages", "controls")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def joint_control(self, t: int) -> Array:
        return np.concatenate([c[t] for c in self.controls])

    def joint_controls(self) -> Array:
        return np.concatenate(self.controls, axis=1)

    def check(self, game: DynamicGame) -> None:
        if self.horizon != game.horizon:
            raise GameInputError(f"trajectory horizon {self.horizon} != game horizon {game.horizon}", "traj")
        if self.states.shape[1] != game.state_dim:
            raise GameInputError(f"state width {self.states.shape[1]} != {game.state_dim}", "traj.states")
        if len(self.controls) != game.num_players:
            raise GameInputError(
                f"{len(self.controls)} control sequences for {game.num_players} players", "traj.controls")
        for i, (c, m) in enumerate(zip(self.controls, game.control_dims)):
            if c.shape[1] != m:
                raise GameInputError(f"player {i} control width {c.shape[1]} != {m}", "traj.controls")


@dataclass(frozen=True)
class AffinePolicySet:
    """Per player and stage, ``u^i_t = -K^i_t x_t - k^i_t``.

    ``gains[i]`` has shape ``(T, m_i, n)`` and ``offsets[i]`` shape ``(T, m_i)``.
    """

    gains: tuple
    offsets: tuple

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(_frozen(g, 3) for g in self.gains))
        object.__setattr__(self, "offsets", tuple(_frozen(k, 2) for k in self.offsets))

    def control(self, i: int, t: int, x: Array) -> Array:
        return -self.gains[i][t] @ x - self.offsets[i][t]

    def check(self, game: DynamicGame) -> None:
        if len(self.gains) != game.num_players:
            raise GameInputError("one gain sequence per player required", "policies")
        for i, (K, k, m) in enumerate(zip(self.gains, self.offsets, game.control_dims)):
            if K.shape != (game.horizon, m, game.state_dim) or k.shape != (game.horizon, m):
                raise GameInputError(f"policy of player {i} has inconsistent shape", "policies")

    @classmethod
    def matching(cls, game: DynamicGame, traj: GameTrajectory, gains=None) -> "AffinePolicySet":
        """Policies with the given gains (zero by default) whose offsets reproduce ``traj``."""
        if gains is None:
            gains = [np.zeros((game.horizon, m, game.state_dim)) for m in game.control_dims]
        offsets = []
        for i, K in enumerate(gains):
            K = np.asarray(K)
            offsets.append(-traj.controls[i] - np.einsum("tmn,tn->tm", K, traj.states[:-1]))
        return cls(tuple(gains), tuple(offsets))


@dataclass(frozen=True)
class SolutionMultipliers:
    """KKT multipliers of every player's problem.

    Sign convention: player ``i``'s Lagrangian is

        J^i + sum_t dynamics[i][t] @ (x_{t+1} - f(x_t, u_t))
            - sum_t eq[i][t] @ h^i_t - sum_t ineq[i][t] @ g^i_t

    so inequality multipliers are nonnegative at a solution.  ``eq[i]`` and
    ``ineq[i]`` hold ``T + 1`` arrays, the last one for the terminal stage.
    """

    dynamics: tuple
    eq: tuple
    ineq: tuple

    def __post_init__(self):
        object.__setattr__(self, "dynamics", tuple(_frozen(d, 2) for d in self.dynamics))
        object.__setattr__(self, "eq", tuple(tuple(_frozen(v, 1) for v in per) for per in self.eq))
        object.__setattr__(self, "ineq", tuple(tuple(_frozen(v, 1) for v in per) for per in self.ineq))

    @classmethod
    def zeros(cls, game: DynamicGame) -> "SolutionMultipliers":
        T, n = game.horizon, game.state_dim
        dyn = [np.zeros((T, n)) for _ in game.players]
        eq = [[np.zeros(game.row_count(i, t, "eq")) for t in range(T + 1)] for i in range(game.num_players)]
        ineq = [[np.zeros(game.row_count(i, t, "ineq")) for t in range(T + 1)] for i in range(game.num_players)]
        return cls(tuple(dyn), tuple(eq), tuple(ineq))

    def blend(self, other: "SolutionMultipliers", alpha: float) -> "SolutionMultipliers":
        """``(1 - alpha) * self + alpha * other``."""
        mix = lambda a, b: (1.0 - alpha) * a + alpha * b  # noqa: E731
        return SolutionMultipliers(
            tuple(mix(a, b) for a, b in zip(self.dynamics, other.dynamics)),
            tuple(tuple(mix(a, b) for a, b in zip(pa, pb)) for pa, pb in zip(self.eq, other.eq)),
            tuple(tuple(mix(a, b) for a, b in zip(pa, pb)) for pa, pb in zip(self.ineq, other.ineq)),
        )

    def check(self, game: DynamicGame) -> None:
        T, n = game.horizon, game.state_dim
        if len(self.dynamics) != game.num_players:
            raise GameInputError("one multiplier block per player required", "multipliers")
        for i in range(game.num_players):
            if self.dynamics[i].shape != (T, n):
                raise GameInputError(f"dynamics multipliers of player {i} have wrong shape", "multipliers")
            for kind, blocks in (("eq", self.eq[i]), ("ineq", self.ineq[i])):
                if len(blocks) != T + 1:
                    raise GameInputError(f"{kind} multipliers of player {i} need {T + 1} stages", "multipliers")
                for t, v in enumerate(blocks):
                    if v.shape[0] != game.row_count(i, t, kind):
                        raise GameInputError(
                            f"{kind} multipliers of player {i} at stage {t} have wrong length", "multipliers")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def rollout(game: DynamicGame, controls: Sequence[Array], x0: Array | None = None) -> GameTrajectory:
    """Integrate the dynamics from ``x0`` (default: the game's initial state)."""
    T = game.horizon
    controls = [np.asarray(c, dtype=float).reshape(T, m) for c, m in zip(controls, game.control_dims)]
    x = np.array(game.initial_state if x0 is None else x0, dtype=float)
    states = [x]
    for t in range(T):
        x = game.dynamics.step(t, x, [c[t] for c in controls])
        states.append(x)
    return GameTrajectory(np.array(states), tuple(controls))


def zero_control_rollout(game: DynamicGame) -> GameTrajectory:
    return rollout(game, [np.zeros((game.horizon, m)) for m in game.control_dims])


def stage_cost(game: DynamicGame, traj: GameTrajectory, player: int, t: int) -> float:
    """Cost of ``player`` at stage ``t`` (``t == T`` gives the terminal cost)."""
    p = game.players[player]
    if t == game.horizon:
        return p.terminal_cost.value(traj.states[t], np.zeros(0))
    return p.stage_cost.value(traj.states[t], traj.joint_control(t))


def evaluate_player_cost(game: DynamicGame, traj: GameTrajectory, player: int) -> float:
    """Full-horizon cost of ``player`` along ``traj``."""
    traj.check(game)
    if not 0 <= player < game.num_players:
        raise GameInputError(f"no player {player}", "player")
    total = 0.0
    for t in range(game.horizon + 1):
        total += stage_cost(game, traj, player, t)
    return total


@dataclass(frozen=True)
class ConstraintValues:
    """Stacked rows per stage ``0..T``; ``ineq`` rows are feasible when ``>= 0``."""

    eq: tuple
    ineq: tuple


def _own_control(game, traj, i, t):
    if t == game.horizon:
        return np.zeros(0)
    return traj.controls[i][t]


def _stack_values(cons, x, ui):
    if not cons:
        return np.zeros(0)
    return np.concatenate([c.value(x, ui) for c in cons])


def constraint_values(game: DynamicGame, traj: GameTrajectory, player: int) -> ConstraintValues:
    traj.check(game)
    if not 0 <= player < game.num_players:
        raise GameInputError(f"no player {player}", "player")
    eq, ineq = [], []
    for t in range(game.horizon + 1):
        x, ui = traj.states[t], _own_control(game, traj, player, t)
        eq.append(_stack_values(game.stage_constraints(player, t, "eq"), x, ui))
        ineq.append(_stack_values(game.stage_constraints(player, t, "ineq"), x, ui))
    return ConstraintValues(tuple(eq), tuple(ineq))


@dataclass(frozen=True)
class StageRows:
    """Linearized constraint rows ``value + Jx dx + Ju du_i`` at one stage."""

    value: Array
    Jx: Array
    Ju: Array

    @property
    def count(self) -> int:
        return self.value.shape[0]


def _stack_rows(cons, x, ui, t):
    n, m = x.shape[0], ui.shape[0]
    if not cons:
        return StageRows(np.zeros(0), np.zeros((0, n)), np.zeros((0, m)))
    vals, jxs, jus = [], [], []
    for c in cons:
        vals.append(c.value(x, ui))
        try:
            jx, ju = c.jacobian(x, ui)
        except DomainError as exc:
            raise DomainError(str(exc), stage=t, constraint=c.name) from exc
        jxs.append(jx)
        jus.append(ju)
    return StageRows(np.concatenate(vals), np.vstack(jxs), np.vstack(jus))


@dataclass(frozen=True)
class GameDerivatives:
    """Stagewise derivative data of a game at a trajectory.

    ``cost_grad[i]`` / ``cost_hess[i]`` are taken with respect to the joint
    ``z_t = (x_t, u_t)``; ``defects[t] = f(x_t, u_t) - x_{t+1}``.
    """

    A: Array
    B: tuple
    defects: Array
    cost_grad: tuple
    cost_hess: tuple
    term_grad: tuple
    term_hess: tuple
    eq: tuple
    ineq: tuple


def differentiate(game: DynamicGame, traj: GameTrajectory) -> GameDerivatives:
    """Exact first and second derivatives of costs, first derivatives of dynamics and constraints."""
    traj.check(game)
    T, n, N = game.horizon, game.state_dim, game.num_players
    A = np.zeros((T, n, n))
    B = [np.zeros((T, n, m)) for m in game.control_dims]
    defects = np.zeros((T, n))
    U = traj.joint_controls()
    for t in range(T):
        At, Bt, _ = game.dynamics.at(t)
        A[t] = At
        for i in range(N):
            B[i][t] = Bt[i]
        defects[t] = game.dynamics.step(t, traj.states[t], [c[t] for c in traj.controls]) - traj.states[t + 1]
    cost_grad, cost_hess, term_grad, term_hess, eq, ineq = [], [], [], [], [], []
    for i, p in enumerate(game.players):
        cost_grad.append(np.array([p.stage_cost.gradient(traj.states[t], U[t]) for t in range(T)]))
        cost_hess.append(np.array([p.stage_cost.hessian(traj.states[t], U[t]) for t in range(T)]))
        term_grad.append(p.terminal_cost.gradient(traj.states[T], np.zeros(0)))
        term_hess.append(p.terminal_cost.hessian(traj.states[T], np.zeros(0)))
        eq_i, ineq_i = [], []
        for t in range(T + 1):
            x, ui = traj.states[t], _own_control(game, traj, i, t)
            eq_i.append(_stack_rows(game.stage_constraints(i, t, "eq"), x, ui, t))
            ineq_i.append(_stack_rows(game.stage_constraints(i, t, "ineq"), x, ui, t))
        eq.append(tuple(eq_i))
        ineq.append(tuple(ineq_i))
    return GameDerivatives(A, tuple(B), defects, tuple(cost_grad), tuple(cost_hess),
                           tuple(term_grad), tuple(term_hess), tuple(eq), tuple(ineq))


def constraint_curvature(game: DynamicGame, traj: GameTrajectory, player: int,
                         multipliers: SolutionMultipliers) -> tuple[Array, Array]:
    """Hessian of ``-(mu'h + gamma'g)`` for one player, embedded in ``z = (x, u)``.

    Returns stage Hessians of shape ``(T, n + M, n + M)`` and the terminal
    ``(n, n)`` block.
    """
    T, n, M = game.horizon, game.state_dim, game.total_control_dim
    sl = game.control_slice(player)
    idx = np.concatenate([np.arange(n), n + np.arange(sl.start, sl.stop)])
    stage = np.zeros((T, n + M, n + M))
    terminal = np.zeros((n, n))
    for t in range(T + 1):
        x, ui = traj.states[t], _own_control(game, traj, player, t)
        for kind, mult in (("eq", multipliers.eq[player][t]), ("ineq", multipliers.ineq[player][t])):
            row = 0
            for c in game.stage_constraints(player, t, kind):
                w = mult[row:row + c.rows]
                row += c.rows
                if not np.any(w):
                    continue
                try:
                    h = -c.hessian(x, ui, w)
                except DomainError as exc:
                    raise DomainError(str(exc), stage=t, constraint=c.name) from exc
                if t == T:
                    terminal += h[:n, :n]
                else:
                    stage[t][np.ix_(idx, idx)] += h
    return stage, terminal
