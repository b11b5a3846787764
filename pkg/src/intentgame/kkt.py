"""First-order optimality certificate for feedback games.

Recomputes every player's KKT conditions from raw problem data: derivatives
of the game at the candidate trajectory, the candidate policies (whose gains
encode how other players react to the state) and the candidate multipliers.
Nothing from the solver's internal recursion is used.

For player ``i`` the other players' controls at stages ``t >= 1`` are tied to
their policies ``u^j_t = -K^j_t x_t - k^j_t``.  Eliminating the multipliers of
those policy constraints gives the state stationarity condition

    dl/dx_t + lam_{t-1} - A_t' lam_t - Jh' mu - Jg' gamma
        + sum_{j != i} K^j_t' (B^j_t' lam_t - dl/du^j_t) = 0.
"""

from __future__ import annotations

import numpy as np

from .model import (
    AffinePolicySet,
    DynamicGame,
    GameTrajectory,
    SolutionMultipliers,
    constraint_values,
    differentiate,
)


def _amax(v) -> float:
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_blocks(game: DynamicGame, traj: GameTrajectory, policies: AffinePolicySet,
               multipliers: SolutionMultipliers) -> dict:
    """Infinity norms of each KKT block, keyed by block name."""
    traj.check(game)
    policies.check(game)
    multipliers.check(game)
    T, n, N = game.horizon, game.state_dim, game.num_players
    d = differentiate(game, traj)
    slices = [game.control_slice(j) for j in range(N)]
    out = {
        "initial_state": _amax(traj.states[0] - game.initial_state),
        "dynamics": _amax(d.defects),
        "policy": max(
            _amax(traj.controls[j] + np.einsum("tmn,tn->tm", policies.gains[j], traj.states[:-1])
                  + policies.offsets[j])
            for j in range(N)
        ),
    }
    stat_u = stat_x = primal_eq = primal_ineq = dual = comp = 0.0
    for i in range(N):
        lam = multipliers.dynamics[i]
        for t in range(T):
            g = d.cost_grad[i][t]
            eq, ineq = d.eq[i][t], d.ineq[i][t]
            mu, gam = multipliers.eq[i][t], multipliers.ineq[i][t]
            ru = g[n + slices[i].start:n + slices[i].stop] - d.B[i][t].T @ lam[t] - eq.Ju.T @ mu - ineq.Ju.T @ gam
            stat_u = max(stat_u, _amax(ru))
            if t >= 1:
                rx = g[:n] + lam[t - 1] - d.A[t].T @ lam[t] - eq.Jx.T @ mu - ineq.Jx.T @ gam
                for j in range(N):
                    if j == i:
                        continue
                    psi = d.B[j][t].T @ lam[t] - g[n + slices[j].start:n + slices[j].stop]
                    rx = rx + policies.gains[j][t].T @ psi
                stat_x = max(stat_x, _amax(rx))
        eqT, ineqT = d.eq[i][T], d.ineq[i][T]
        rT = d.term_grad[i] + lam[T - 1] - eqT.Jx.T @ multipliers.eq[i][T] - ineqT.Jx.T @ multipliers.ineq[i][T]
        stat_x = max(stat_x, _amax(rT))
        for t in range(T + 1):
            g_val = d.ineq[i][t].value
            gam = multipliers.ineq[i][t]
            primal_eq = max(primal_eq, _amax(d.eq[i][t].value))
            primal_ineq = max(primal_ineq, _amax(np.minimum(g_val, 0.0)))
            dual = max(dual, _amax(np.minimum(gam, 0.0)))
            comp = max(comp, _amax(gam * g_val))
    out.update({
        "stationarity_u": stat_u,
        "stationarity_x": stat_x,
        "primal_eq": primal_eq,
        "primal_ineq": primal_ineq,
        "dual": dual,
        "complementarity": comp,
    })
    return out


def kkt_residual(game: DynamicGame, traj: GameTrajectory, policies: AffinePolicySet,
                 multipliers: SolutionMultipliers) -> float:
    """Infinity norm of the concatenated KKT residual of all players."""
    return max(kkt_blocks(game, traj, policies, multipliers).values())


def deviation_rollout(game: DynamicGame, traj: GameTrajectory, policies: AffinePolicySet,
                      player: int, delta: np.ndarray) -> GameTrajectory:
    """Trajectory when ``player`` adds ``delta`` to its controls and the others follow their policies."""
    x = np.array(traj.states[0], dtype=float)
    states = [x]
    controls = [np.zeros((game.horizon, m)) for m in game.control_dims]
    for t in range(game.horizon):
        for j in range(game.num_players):
            controls[j][t] = traj.controls[j][t] + delta[t] if j == player else policies.control(j, t, x)
        x = game.dynamics.step(t, x, [c[t] for c in controls])
        states.append(x)
    return GameTrajectory(np.array(states), tuple(controls))


def _row_values(game, traj, player, active):
    vals = constraint_values(game, traj, player)
    rows = [np.concatenate(vals.eq)] if any(v.size for v in vals.eq) else []
    ineq = np.concatenate(vals.ineq) if any(v.size for v in vals.ineq) else np.zeros(0)
    rows.append(ineq[active])
    return np.concatenate(rows)


def perturbation_slopes(game: DynamicGame, traj: GameTrajectory, policies: AffinePolicySet,
                        multipliers: SolutionMultipliers, rng: np.random.Generator, directions: int = 5,
                        steps=(1e-2, 1e-3, 1e-4), active_tol: float = 1e-6, fd_step: float = 1e-6) -> dict:
    """Log-log slope of each player's cost change under unilateral deviations.

    Each player deviates along random directions that leave its equality rows
    and active inequality rows unchanged to first order; the others react
    through their policies.  At a local equilibrium the cost change is
    quadratic in the step, so every slope is close to 2.  Returns
    ``{player: [slope, ...]}``.
    """
    from .model import evaluate_player_cost

    T = game.horizon
    out = {}
    for i in range(game.num_players):
        m = game.control_dims[i]
        g_all = np.concatenate(constraint_values(game, traj, i).ineq) if game.players[i].constraints else np.zeros(0)
        gam = np.concatenate(multipliers.ineq[i]) if len(multipliers.ineq[i]) else np.zeros(0)
        active = (g_all <= active_tol) | (gam > active_tol) if g_all.size else np.zeros(0, dtype=bool)
        base_rows = _row_values(game, traj, i, active)
        if base_rows.size:
            jac = np.zeros((base_rows.size, T * m))
            for k in range(T * m):
                e = np.zeros(T * m)
                e[k] = fd_step
                plus = _row_values(game, deviation_rollout(game, traj, policies, i, e.reshape(T, m)), i, active)
                minus = _row_values(game, deviation_rollout(game, traj, policies, i, -e.reshape(T, m)), i, active)
                jac[:, k] = (plus - minus) / (2 * fd_step)
            _, s, vt = np.linalg.svd(jac)
            rank = int(np.sum(s > 1e-9 * max(1.0, s[0] if s.size else 1.0)))
            basis = vt[rank:].T
        else:
            basis = np.eye(T * m)
        base_cost = evaluate_player_cost(game, traj, i)
        slopes = []
        for _ in range(directions):
            d = basis @ rng.standard_normal(basis.shape[1])
            d /= np.linalg.norm(d)
            changes = [abs(evaluate_player_cost(game, deviation_rollout(game, traj, policies, i,
                                                                        (h * d).reshape(T, m)), i) - base_cost)
                       for h in steps]
            slopes.append(float(np.polyfit(np.log(steps), np.log(np.maximum(changes, 1e-300)), 1)[0]))
        out[i] = slopes
    return out
