"""Sequential LQ-game iterations for constrained feedback games.

Each major iteration expands the game about the current trajectory, solves the
resulting inequality-constrained LQ game with the active-set loop and takes a
backtracking step.  The merit function is the infinity norm of the
concatenated KKT residual, so a step is accepted only if it brings every
player closer to first-order equilibrium conditions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .active_set import WorkingSet, solve_inequality_lq_game
from .errors import GameInputError, SolverError
from .kkt import kkt_residual
from .lq import LQApproximation
from .model import (
    AffinePolicySet,
    DynamicGame,
    GameTrajectory,
    SolutionMultipliers,
    constraint_curvature,
    differentiate,
    stage_cost,
    zero_control_rollout,
)


@dataclass(frozen=True)
class SolveSettings:
    max_major_iterations: int = 100
    kkt_tolerance: float = 1e-6
    backtracking_factor: float = 0.5
    min_step: float = 1e-6
    max_minor_iterations: int = 200
    max_stalls: int = 3
    # include -mu * d2h terms of each player's constraints in its Hessian;
    # off by default so each subproblem sees the constraints linearized only
    constraint_curvature: bool = False
    # proximal weight on each player's own controls, raised when an LQ
    # subproblem cannot be solved and relaxed after full steps
    min_damping: float = 1e-2
    max_damping: float = 1e6
    damping_factor: float = 10.0

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.min_step <= 0:
            raise GameInputError("tolerances must be positive", "settings")
        if not 0.0 < self.backtracking_factor < 1.0:
            raise GameInputError("backtracking factor must lie in (0, 1)", "settings.backtracking_factor")
        if self.max_major_iterations < 1 or self.max_minor_iterations < 1:
            raise GameInputError("iteration caps must be positive", "settings")


@dataclass
class SolveReport:
    converged: bool
    major_iterations: int
    total_minor_iterations: int
    minor_iterations: list
    final_residual: float
    residual_trace: list
    step_sizes: list
    stalls: int
    wall_time: float
    data_time: float
    working_set: dict
    active_set_history: list = field(default_factory=list)
    dampings: list = field(default_factory=list)

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "converged": self.converged,
            "major_iterations": self.major_iterations,
            "total_minor_iterations": self.total_minor_iterations,
            "minor_iterations": list(self.minor_iterations),
            "final_residual": self.final_residual,
            "residual_trace": list(self.residual_trace),
            "step_sizes": list(self.step_sizes),
            "stalls": self.stalls,
            "working_set": self.working_set,
            "active_set_history": [list(h) for h in self.active_set_history],
            "dampings": list(self.dampings),
        }
        if timings:
            out["wall_time"] = self.wall_time
            out["data_time"] = self.data_time
        return out


@dataclass(frozen=True)
class GameSolution:
    trajectory: GameTrajectory
    policies: AffinePolicySet
    multipliers: SolutionMultipliers
    report: SolveReport

    def __iter__(self):
        return iter((self.trajectory, self.policies, self.multipliers, self.report))


def quadraticize(game: DynamicGame, traj: GameTrajectory,
                 multipliers: SolutionMultipliers | None = None) -> LQApproximation:
    """Second-order expansion of costs, first-order expansion of dynamics and constraints.

    Dynamics defects ``f(x_t, u_t) - x_{t+1}`` become the affine offsets of the
    deviation dynamics, and ``x_0`` mismatch becomes the initial deviation.
    With ``multipliers`` given, each player's Hessian also carries the
    curvature of its own constraints weighted by those multipliers.
    """
    d = differentiate(game, traj)
    T, N = game.horizon, game.num_players
    U = traj.joint_controls()
    hess, const, term_hess, term_const = [], [], [], []
    for i, p in enumerate(game.players):
        h = np.array(d.cost_hess[i])
        th = np.array(d.term_hess[i])
        if multipliers is not None:
            ch, cth = constraint_curvature(game, traj, i, multipliers)
            h += ch
            th += cth
        hess.append(h)
        term_hess.append(th)
        const.append(np.array([p.stage_cost.value(traj.states[t], U[t]) for t in range(T)]))
        term_const.append(stage_cost(game, traj, i, T))
    return LQApproximation(
        x0=np.array(game.initial_state - traj.states[0]),
        A=d.A,
        B=d.B,
        c=d.defects,
        cost_hess=tuple(hess),
        cost_grad=d.cost_grad,
        cost_const=tuple(const),
        term_hess=tuple(term_hess),
        term_grad=d.term_grad,
        term_const=tuple(term_const),
        eq=d.eq,
        ineq=d.ineq,
    )


def _damped(lq: LQApproximation, weight: float) -> LQApproximation:
    """Copy of ``lq`` with ``weight`` added to each player's own-control Hessian diagonal."""
    if weight == 0.0:
        return lq
    n = lq.state_dim
    hess = []
    for i, h in enumerate(lq.cost_hess):
        h = np.array(h)
        sl = lq.control_slice(i)
        idx = np.arange(n + sl.start, n + sl.stop)
        h[:, idx, idx] += weight
        hess.append(h)
    return replace(lq, cost_hess=tuple(hess))


def _candidate(game, traj, sol, alpha):
    states = traj.states + alpha * sol.trajectory.states
    controls = tuple(c + alpha * dc for c, dc in zip(traj.controls, sol.trajectory.controls))
    cand = GameTrajectory(states, controls)
    return cand, AffinePolicySet.matching(game, cand, sol.policies.gains)


def solve_gfne(game: DynamicGame, init: GameTrajectory | None = None,
               settings: SolveSettings | None = None, working_set: WorkingSet | None = None) -> GameSolution:
    """Local generalized feedback Nash equilibrium of ``game``.

    Nonconvergence is reported through ``report.converged`` rather than an
    exception; errors of the inner LQ solves propagate with the major
    iteration attached.
    """
    settings = settings or SolveSettings()
    start = time.perf_counter()
    data_time = 0.0
    traj = zero_control_rollout(game) if init is None else init
    traj.check(game)
    mult = SolutionMultipliers.zeros(game)
    policies = AffinePolicySet.matching(game, traj)
    merit = kkt_residual(game, traj, policies, mult)
    ws = WorkingSet() if working_set is None else WorkingSet(working_set.rows)
    trace, steps, minors, dampings = [], [], [], []
    damping = 0.0
    stalls = 0
    converged = merit <= settings.kkt_tolerance
    major = 0
    while not converged and major < settings.max_major_iterations:
        major += 1
        tic = time.perf_counter()
        lq = quadraticize(game, traj, mult if settings.constraint_curvature else None)
        data_time += time.perf_counter() - tic
        spent = 0
        while True:
            try:
                sol, new_ws, minor = solve_inequality_lq_game(_damped(lq, damping), ws,
                                                              settings.max_minor_iterations)
                break
            except SolverError as exc:
                spent += getattr(exc, "minor_iterations", 0)
                if damping >= settings.max_damping:
                    exc.args = (f"major iteration {major}: {exc.args[0]}",) + exc.args[1:]
                    exc.major_iteration = major
                    raise
                damping = max(settings.min_damping, damping * settings.damping_factor)
        ws = new_ws
        minor += spent
        dampings.append(damping)
        minors.append(minor)
        alpha = 1.0
        accepted = None
        while alpha >= settings.min_step:
            cand, cand_pol = _candidate(game, traj, sol, alpha)
            cand_mult = sol.multipliers
            m = kkt_residual(game, cand, cand_pol, cand_mult)
            if m < merit:
                accepted = (cand, cand_pol, cand_mult, m, alpha)
                break
            alpha *= settings.backtracking_factor
        if accepted is None:
            stalls += 1
            alpha = settings.min_step
            cand, cand_pol = _candidate(game, traj, sol, alpha)
            cand_mult = sol.multipliers
            accepted = (cand, cand_pol, cand_mult, kkt_residual(game, cand, cand_pol, cand_mult), alpha)
        traj, policies, mult, merit, alpha = accepted
        if alpha == 1.0:
            damping = damping / settings.damping_factor
            if damping < settings.min_damping:
                damping = 0.0
        trace.append(merit)
        steps.append(alpha)
        if merit <= settings.kkt_tolerance:
            converged = True
        elif stalls >= settings.max_stalls:
            break
    report = SolveReport(
        converged=bool(converged),
        major_iterations=major,
        total_minor_iterations=int(sum(minors)),
        minor_iterations=minors,
        final_residual=float(merit),
        residual_trace=[float(v) for v in trace],
        step_sizes=steps,
        stalls=stalls,
        wall_time=time.perf_counter() - start,
        data_time=data_time,
        working_set=ws.summary(),
        active_set_history=list(ws.history),
        dampings=[float(d) for d in dampings],
    )
    return GameSolution(traj, policies, mult, report)
