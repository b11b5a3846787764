"""Inequality handling for LQ games by a primal active-set loop.

Each minor iteration solves the equality-constrained LQ game with the current
working set.  The most violated inactive inequality row is added; failing
that, the working-set row with the most negative multiplier is dropped;
otherwise the loop terminates.  Exactly one change is made per iteration.
When the preferred change would return to a working set that was already
solved, the next candidate in the same ranking is taken instead; only when
every candidate leads back does the loop report cycling.

Violation is measured as the distance to the row's zero set in the space of
its owner's control sequence (raw violation divided by the norm of the row's
sensitivity to that sequence, other players reacting through their
policies).  Collision rows at neighbouring stages are nearly parallel in that
space, and the raw value tends to pick the deepest point of a violated arc
rather than the stage where contact is actually needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ActiveSetLimitError, SolverError
from .lq import LQApproximation, LQSolution, _perturbation_response, solve_lq_feedback_game

ADD_TOL = 1e-9
DROP_TOL = 1e-9


@dataclass(frozen=True)
class WorkingSet:
    """Inequality rows ``(player, stage, row)`` currently held as equalities.

    ``history`` records ``(action, player, stage, row)`` tuples across calls.
    """

    rows: frozenset = frozenset()
    iterations: int = 0
    history: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", frozenset(self.rows))
        object.__setattr__(self, "history", tuple(self.history))

    def add(self, key) -> "WorkingSet":
        return WorkingSet(self.rows | {key}, self.iterations, self.history + (("add",) + tuple(key),))

    def drop(self, key) -> "WorkingSet":
        return WorkingSet(self.rows - {key}, self.iterations, self.history + (("drop",) + tuple(key),))

    def summary(self) -> dict:
        per_player: dict[int, int] = {}
        for p, _, _ in self.rows:
            per_player[p] = per_player.get(p, 0) + 1
        return {"size": len(self.rows), "per_player": {str(k): v for k, v in sorted(per_player.items())},
                "rows": sorted([list(r) for r in self.rows])}


def inequality_values(lq: LQApproximation, sol: LQSolution) -> dict:
    """Value of every inequality row of the LQ game along the solution trajectory."""
    out = {}
    T = lq.horizon
    for i in range(lq.num_players):
        for t in range(T + 1):
            rows = lq.ineq[i][t]
            if not rows.count:
                continue
            vals = rows.value + rows.Jx @ sol.trajectory.states[t]
            if t < T:
                vals = vals + rows.Ju @ sol.trajectory.controls[i][t]
            for r, v in enumerate(vals):
                out[(i, t, r)] = float(v)
    return out


def violation_scores(lq: LQApproximation, sol: LQSolution, values: dict) -> dict:
    """Violated rows mapped to their violation distance in the owner's control space."""
    out = {}
    by_player: dict[int, list] = {}
    for key, v in values.items():
        if v < -ADD_TOL:
            by_player.setdefault(key[0], []).append(key)
    T = lq.horizon
    for i, keys in by_player.items():
        Sx, Su = _perturbation_response(lq, sol, i)
        sl = lq.control_slice(i)
        for key in keys:
            _, t, r = key
            rows = lq.ineq[i][t]
            sens = rows.Jx[r] @ Sx[t]
            if t < T:
                sens = sens + rows.Ju[r] @ Su[t, sl]
            norm = float(np.linalg.norm(sens))
            out[key] = values[key] / norm if norm > 1e-12 else values[key]
    return out


def _working_multipliers(sol: LQSolution, rows) -> dict:
    return {key: float(sol.multipliers.ineq[key[0]][key[1]][key[2]]) for key in rows}


def solve_inequality_lq_game(lq: LQApproximation, init: WorkingSet | None = None,
                             max_iterations: int = 200, scoring: str = "normalized"
                             ) -> tuple[LQSolution, WorkingSet, int]:
    """Solve an LQ game with inequality rows.

    Returns the solution, the final working set and the number of
    equality-constrained solves performed.  Raises
    :class:`ActiveSetLimitError` when every candidate action leads back to a
    working set already solved, or when ``max_iterations`` is exceeded.

    Candidate actions are ranked as described in the module docstring; the
    first one whose resulting working set has not been solved yet is taken.
    """
    if scoring not in ("normalized", "raw"):
        raise ValueError(f"unknown scoring {scoring!r}")
    ws = init if init is not None else WorkingSet()
    ws = WorkingSet(frozenset(r for r in ws.rows if r[2] < lq.ineq[r[0]][r[1]].count), 0, ws.history)
    seen = {ws.rows}
    it = 0
    best = None

    def fail(message):
        exc = ActiveSetLimitError(message, list(ws.history),
                                  None if best is None else (best[1], best[2], it))
        exc.minor_iterations = it
        return exc

    while True:
        it += 1
        if it > max_iterations:
            raise fail(f"active-set loop exceeded {max_iterations} minor iterations")
        try:
            sol = solve_lq_feedback_game(lq, ws.rows)
        except SolverError as exc:
            exc.history = list(ws.history)
            exc.minor_iterations = it
            raise
        values = inequality_values(lq, sol)
        inactive = {key: v for key, v in values.items() if key not in ws.rows}
        if scoring == "raw":
            scores = {key: v for key, v in inactive.items() if v < -ADD_TOL}
        else:
            scores = violation_scores(lq, sol, inactive)
        mults = _working_multipliers(sol, ws.rows)
        scale = max([1.0] + [abs(m) for m in mults.values()])
        negative = {key: m for key, m in mults.items() if m < -DROP_TOL * scale}
        if not scores and not negative:
            return sol, WorkingSet(ws.rows, it, ws.history), it
        gap = max([-v for v in inactive.values()] + [-m for m in mults.values()])
        if best is None or gap < best[0]:
            best = (gap, sol, WorkingSet(ws.rows, it, ws.history))
        candidates = [("add", key) for _, key in sorted((v, key) for key, v in scores.items())]
        candidates += [("drop", key) for _, key in sorted((m, key) for key, m in negative.items())]
        for action, key in candidates:
            rows = ws.rows | {key} if action == "add" else ws.rows - {key}
            if rows not in seen:
                break
        else:
            raise fail("active-set loop revisited a working set")
        seen.add(rows)
        ws = ws.add(key) if action == "add" else ws.drop(key)
