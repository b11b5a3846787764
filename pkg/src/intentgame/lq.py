"""Equality-constrained linear-quadratic feedback games.

The solver runs a backward recursion over stages.  At stage ``s`` every
player's stationarity conditions (stage cost plus quadratic value-to-go) and
its constraint rows that its own control can satisfy are stacked into one
joint linear system, solved for all controls and multipliers as affine
functions of ``x_s``.  Rows a player cannot influence at stage ``s`` are
carried backward as a constraint-to-go on the state, owned by that player,
until an earlier stage gives it enough control authority.  The forward pass
rolls the resulting affine policies out from the initial state.

Multipliers come out of the same recursion: each stage solve yields the
multipliers of the rows it absorbs as affine functions of the state, and the
multipliers of carried rows are pushed forward along the rolled-out
trajectory through the row transforms applied on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GameInputError, InfeasibleError, SolverError
from .model import AffinePolicySet, GameTrajectory, SolutionMultipliers, StageRows

RANK_TOL = 1e-9
FEAS_TOL = 1e-7
COND_LIMIT = 1e12
REG_START = 1e-8
REG_MAX = 1e-2


@dataclass(frozen=True)
class LQApproximation:
    """Linear dynamics, quadratic costs and affine constraint rows per stage.

    All quantities are in the deviation coordinates of a linearization point:
    ``dx_{t+1} = A_t dx_t + sum_i B^i_t du^i_t + c_t`` with ``dx_0 = x0``.
    ``cost_hess[i][t]`` and ``cost_grad[i][t]`` act on ``(dx_t, du_t)``.
    ``eq[i][t]`` / ``ineq[i][t]`` hold :class:`StageRows` for stages ``0..T``;
    row ``r`` reads ``value[r] + Jx[r] @ dx_t + Ju[r] @ du^i_t``.
    """

    x0: np.ndarray
    A: np.ndarray
    B: tuple
    c: np.ndarray
    cost_hess: tuple
    cost_grad: tuple
    cost_const: tuple
    term_hess: tuple
    term_grad: tuple
    term_const: tuple
    eq: tuple
    ineq: tuple

    def __post_init__(self):
        T, n = self.horizon, self.state_dim
        if self.A.shape != (T, n, n) or self.c.shape != (T, n) or self.x0.shape != (n,):
            raise GameInputError("dynamics blocks have inconsistent shapes", "lq.dynamics")
        M = sum(self.control_dims)
        for i in range(self.num_players):
            if self.B[i].shape[:2] != (T, n):
                raise GameInputError(f"B of player {i} has shape {self.B[i].shape}", "lq.B")
            if self.cost_hess[i].shape != (T, n + M, n + M) or self.cost_grad[i].shape != (T, n + M):
                raise GameInputError(f"cost blocks of player {i} have inconsistent shapes", "lq.cost")
            if self.term_hess[i].shape != (n, n) or self.term_grad[i].shape != (n,):
                raise GameInputError(f"terminal cost of player {i} has inconsistent shape", "lq.term")
            for rows in (self.eq[i], self.ineq[i]):
                if len(rows) != T + 1:
                    raise GameInputError(f"player {i} needs constraint rows for {T + 1} stages", "lq.rows")

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]

    @property
    def num_players(self) -> int:
        return len(self.B)

    @property
    def control_dims(self) -> list[int]:
        return [b.shape[2] for b in self.B]

    @property
    def control_offsets(self) -> list[int]:
        return [int(v) for v in np.concatenate([[0], np.cumsum(self.control_dims)[:-1]])]

    def control_slice(self, i: int) -> slice:
        off = self.control_offsets[i]
        return slice(off, off + self.control_dims[i])

    def joint_B(self, t: int) -> np.ndarray:
        return np.concatenate([b[t] for b in self.B], axis=1)


def empty_rows(n: int, m: int) -> StageRows:
    return StageRows(np.zeros(0), np.zeros((0, n)), np.zeros((0, m)))


def unconstrained_rows(num_players: int, horizon: int, n: int, control_dims) -> tuple:
    return tuple(
        tuple(empty_rows(n, control_dims[i] if t < horizon else 0) for t in range(horizon + 1))
        for i in range(num_players)
    )


@dataclass(frozen=True)
class ValueModel:
    """Quadratic value ``0.5 x'Px + p'x + const`` valid on ``{C x + cc = 0}``."""

    P: np.ndarray
    p: np.ndarray
    const: float
    C: np.ndarray
    cc: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.p @ x + self.const)


@dataclass(frozen=True)
class LQSolution:
    policies: AffinePolicySet
    trajectory: GameTrajectory
    multipliers: SolutionMultipliers
    values: tuple
    stationarity_residual: float
    regularization: float


def _active(lq: LQApproximation, i: int, t: int, working) -> tuple[StageRows, list]:
    """Equality rows plus the working-set inequality rows of player ``i`` at ``t``."""
    eq, ineq = lq.eq[i][t], lq.ineq[i][t]
    sel = sorted(r for (p, s, r) in working if p == i and s == t)
    if not sel:
        return eq, sel
    return StageRows(
        np.concatenate([eq.value, ineq.value[sel]]),
        np.vstack([eq.Jx, ineq.Jx[sel]]),
        np.vstack([eq.Ju, ineq.Ju[sel]]),
    ), sel


def _normalize(X: np.ndarray, r: np.ndarray, stage: int, player: int):
    """Scale rows of ``[X | r]`` to unit coefficient norm and drop vacuous rows.

    Returns the scaled rows and the matrix ``D`` with ``X_new = D @ X``.
    """
    if X.shape[0] == 0:
        return X, r, np.zeros((0, 0))
    norms = np.linalg.norm(X, axis=1)
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    keep = norms > RANK_TOL * scale
    if np.any(~keep & (np.abs(r) > FEAS_TOL)):
        raise InfeasibleError("constraint row cannot be influenced by any decision", stage=stage, player=player)
    D = np.eye(X.shape[0])[keep] / norms[keep, None]
    return D @ X, D @ r, D


def _compress_state_rows(C: np.ndarray, cc: np.ndarray, stage: int, player: int):
    """Reduce state rows ``C x + cc = 0`` to an independent set.

    Returns the reduced rows and the matrix ``Q`` with ``C_new = Q @ C``.
    """
    C1, cc1, D = _normalize(C, cc, stage, player)
    if C1.shape[0] == 0:
        return C1, cc1, np.zeros((0, C.shape[0]))
    U, S, _ = np.linalg.svd(C1, full_matrices=True)
    rank = int(np.sum(S > RANK_TOL * max(1.0, S[0])))
    lost = U[:, rank:].T @ cc1
    if lost.size and np.max(np.abs(lost)) > FEAS_TOL:
        raise InfeasibleError(
            "constraint-to-go rank exceeds available control authority", stage=stage, player=player)
    Q = U[:, :rank].T @ D
    return Q @ C, Q @ cc, Q


def _equilibrate(mat: np.ndarray, passes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Ruiz row and column scalings bringing every row and column max-norm near one."""
    dr = np.ones(mat.shape[0])
    dc = np.ones(mat.shape[1])
    work = np.abs(mat)
    for _ in range(passes):
        r = np.max(work, axis=1)
        c = np.max(work, axis=0)
        r = 1.0 / np.sqrt(np.where(r > 0, r, 1.0))
        c = 1.0 / np.sqrt(np.where(c > 0, c, 1.0))
        dr *= r
        dc *= c
        work = r[:, None] * work * c[None, :]
    return dr, dc


@dataclass(frozen=True)
class _RowMaps:
    """How one player's stacked rows at a stage were split.

    The stacked rows are the active stage rows followed by the
    constraint-to-go rows of the next stage.  ``absorb`` maps them to the rows
    enforced in the stage system, ``carry`` to the new constraint-to-go.
    """

    n_stage: int
    absorb: np.ndarray
    carry: np.ndarray
    nu_gain: np.ndarray
    nu_offset: np.ndarray


def _solve_stage_system(mat, rhs, M, cond_limit, stage):
    reg = 0.0
    while True:
        trial = mat.copy()
        if reg:
            trial[np.arange(M), np.arange(M)] += reg
        try:
            dr, dc = _equilibrate(trial)
            scaled = dr[:, None] * trial * dc[None, :]
            cond = np.linalg.cond(scaled)
            if not np.isfinite(cond) or cond > cond_limit:
                raise np.linalg.LinAlgError
            return dc[:, None] * np.linalg.solve(scaled, dr[:, None] * rhs), reg
        except np.linalg.LinAlgError:
            reg = REG_START if reg == 0.0 else reg * 10.0
            if reg > REG_MAX * (1 + 1e-9):
                raise SolverError("stagewise joint system is singular after regularization", stage=stage)


def solve_lq_feedback_game(lq: LQApproximation, working=frozenset(),
                           cond_limit: float = COND_LIMIT) -> LQSolution:
    """Feedback Nash solution of an equality-constrained LQ game.

    ``working`` is a set of ``(player, stage, row)`` inequality rows to treat
    as equalities.  Raises :class:`SolverError` when a stagewise system stays
    singular after regularization and :class:`InfeasibleError` when a
    player's constraint rows cannot be met.
    """
    T, n, N = lq.horizon, lq.state_dim, lq.num_players
    dims = lq.control_dims
    M = sum(dims)
    slices = [lq.control_slice(i) for i in range(N)]
    working = frozenset(working)

    P = [0.5 * (lq.term_hess[i] + lq.term_hess[i].T) for i in range(N)]
    p = [np.array(lq.term_grad[i], dtype=float) for i in range(N)]
    const = [float(lq.term_const[i]) for i in range(N)]
    togo, term_maps = [], []
    for i in range(N):
        rows, _ = _active(lq, i, T, working)
        C, cc, Q = _compress_state_rows(rows.Jx, rows.value, T, i)
        togo.append((C, cc))
        term_maps.append(Q)

    values = [[None] * (T + 1) for _ in range(N)]
    for i in range(N):
        values[i][T] = ValueModel(P[i], p[i], const[i], *togo[i])
    maps = [[None] * T for _ in range(N)]
    gains = np.zeros((T, M, n))
    offsets = np.zeros((T, M))
    max_reg = 0.0

    for s in range(T - 1, -1, -1):
        A, c = lq.A[s], lq.c[s]
        Bj = lq.joint_B(s)
        absorbed, rest, split = [], [], []
        for i in range(N):
            stage_rows, _ = _active(lq, i, s, working)
            C, cc = togo[i]
            k_stage = stage_rows.count
            Rx = np.vstack([stage_rows.Jx, C @ A])
            Ru = np.zeros((k_stage + C.shape[0], M))
            Ru[:k_stage, slices[i]] = stage_rows.Ju
            Ru[k_stage:] = C @ Bj
            r0 = np.concatenate([stage_rows.value, C @ c + cc])
            total = Rx.shape[0]
            if total == 0:
                absorbed.append((np.zeros((0, n)), np.zeros((0, M)), np.zeros(0)))
                rest.append((np.zeros((0, n)), np.zeros((0, M)), np.zeros(0)))
                split.append((0, np.zeros((0, 0)), np.zeros((0, 0))))
                continue
            X, r0, D = _normalize(np.hstack([Rx, Ru]), r0, s, i)
            Rx, Ru = X[:, :n], X[:, n:]
            own = Ru[:, slices[i]]
            U, S, _ = np.linalg.svd(own, full_matrices=True)
            rank = int(np.sum(S > RANK_TOL))
            # scale so the owner's block of each absorbed row has unit singular value
            W = U[:, :rank].T / S[:rank, None]
            U2 = U[:, rank:].T
            absorbed.append((W @ Rx, W @ Ru, W @ r0))
            Ru2 = U2 @ Ru
            Ru2[:, slices[i]] = 0.0
            rest.append((U2 @ Rx, Ru2, U2 @ r0))
            split.append((k_stage, (W @ D).reshape(rank, total), (U2 @ D).reshape(U2.shape[0], total)))

        # joint stagewise system in (u, nu)
        counts = [a[0].shape[0] for a in absorbed]
        size = M + sum(counts)
        mat = np.zeros((size, size))
        rhs = np.zeros((size, n + 1))
        row = M
        for i in range(N):
            H, g = lq.cost_hess[i][s], lq.cost_grad[i][s]
            si = slices[i]
            ui = np.arange(n + si.start, n + si.stop)
            Bi = lq.B[i][s]
            mat[si, :M] = H[ui, n:] + Bi.T @ P[i] @ Bj
            rhs[si, :n] = H[ui, :n] + Bi.T @ P[i] @ A
            rhs[si, n] = g[ui] + Bi.T @ (P[i] @ c + p[i])
            ax, au, a0 = absorbed[i]
            k = counts[i]
            if k:
                mat[si, row:row + k] = -au[:, si].T
                mat[row:row + k, :M] = au
                rhs[row:row + k, :n] = ax
                rhs[row:row + k, n] = a0
            row += k

        sol, reg = _solve_stage_system(mat, rhs, M, cond_limit, s)
        max_reg = max(max_reg, reg)
        K, k = sol[:M, :n], sol[:M, n]
        gains[s], offsets[s] = K, k

        Acl = A - Bj @ K
        ccl = c - Bj @ k
        Z = np.vstack([np.eye(n), -K])
        z0 = np.concatenate([np.zeros(n), -k])
        row = M
        for i in range(N):
            H, g = lq.cost_hess[i][s], lq.cost_grad[i][s]
            Pn = Z.T @ H @ Z + Acl.T @ P[i] @ Acl
            pn = Z.T @ (H @ z0 + g) + Acl.T @ (P[i] @ ccl + p[i])
            const[i] = float(0.5 * z0 @ H @ z0 + g @ z0 + lq.cost_const[i][s]
                             + 0.5 * ccl @ P[i] @ ccl + p[i] @ ccl + const[i])
            P[i] = 0.5 * (Pn + Pn.T)
            p[i] = pn
            rx, ru, r0 = rest[i]
            C, cc, Q = _compress_state_rows(rx - ru @ K, r0 - ru @ k, s, i)
            togo[i] = (C, cc)
            values[i][s] = ValueModel(P[i], p[i], const[i], C, cc)
            k_stage, absorb, carry = split[i]
            # nu = -(nu_gain x + nu_offset), same sign convention as the controls
            maps[i][s] = _RowMaps(k_stage, absorb, Q @ carry, sol[row:row + counts[i], :n],
                                  sol[row:row + counts[i], n])
            row += counts[i]

    for i in range(N):
        C, cc = togo[i]
        if C.shape[0] and np.max(np.abs(C @ lq.x0 + cc)) > FEAS_TOL:
            raise InfeasibleError("initial state violates constraint-to-go", stage=0, player=i)

    states = np.zeros((T + 1, n))
    controls = np.zeros((T, M))
    states[0] = lq.x0
    for t in range(T):
        controls[t] = -gains[t] @ states[t] - offsets[t]
        states[t + 1] = lq.A[t] @ states[t] + lq.joint_B(t) @ controls[t] + lq.c[t]
    traj = GameTrajectory(states, tuple(controls[:, sl] for sl in slices))
    policies = AffinePolicySet(tuple(gains[:, sl, :] for sl in slices), tuple(offsets[:, sl] for sl in slices))
    multipliers = _forward_multipliers(lq, values, maps, term_maps, states, working)
    sol = LQSolution(policies, traj, multipliers, tuple(tuple(v) for v in values), 0.0, max_reg)
    resid = lq_stationarity_residual(lq, sol)
    return LQSolution(policies, traj, multipliers, sol.values, resid, max_reg)


def _forward_multipliers(lq, values, maps, term_maps, states, working) -> SolutionMultipliers:
    """Multipliers along the rolled-out trajectory.

    Multipliers of the constraint-to-go rows start at zero at the initial
    state (those rows only restrict the fixed ``x_0``) and are pushed forward
    through the row maps of each stage.  The dynamics multiplier is the
    negative gradient of the Lagrangian-to-go at the next state.
    """
    T, n, N = lq.horizon, lq.state_dim, lq.num_players
    dyn, eq_out, ineq_out = [], [], []
    for i in range(N):
        eta = np.zeros(values[i][0].C.shape[0])
        lam = np.zeros((T, n))
        active = []
        for t in range(T):
            mp = maps[i][t]
            x = states[t]
            nu = -(mp.nu_gain @ x + mp.nu_offset)
            stacked = mp.absorb.T @ nu + mp.carry.T @ eta
            active.append(stacked[:mp.n_stage])
            eta = stacked[mp.n_stage:]
            v = values[i][t + 1]
            lam[t] = -(v.P @ states[t + 1] + v.p) + v.C.T @ eta
        active.append(term_maps[i].T @ eta)
        dyn.append(lam)
        eq_i, ineq_i = [], []
        for t in range(T + 1):
            _, sel = _active(lq, i, t, working)
            ne = lq.eq[i][t].count
            eq_i.append(active[t][:ne])
            full = np.zeros(lq.ineq[i][t].count)
            full[sel] = active[t][ne:]
            ineq_i.append(full)
        eq_out.append(eq_i)
        ineq_out.append(ineq_i)
    return SolutionMultipliers(tuple(dyn), tuple(eq_out), tuple(ineq_out))


def lq_stationarity_residual(lq: LQApproximation, sol: LQSolution) -> float:
    """Largest violation of the players' stationarity conditions for the LQ game."""
    T, n, N = lq.horizon, lq.state_dim, lq.num_players
    slices = [lq.control_slice(j) for j in range(N)]
    U = np.concatenate(sol.trajectory.controls, axis=1)
    Z = np.hstack([sol.trajectory.states[:-1], U])
    m = sol.multipliers
    worst = 0.0
    for i in range(N):
        lam = m.dynamics[i]
        grad = np.einsum("tab,tb->ta", lq.cost_hess[i], Z) + lq.cost_grad[i]
        for t in range(T):
            eq, ineq = lq.eq[i][t], lq.ineq[i][t]
            mu, gam = m.eq[i][t], m.ineq[i][t]
            si = slices[i]
            ru = grad[t, n + si.start:n + si.stop] - lq.B[i][t].T @ lam[t] - eq.Ju.T @ mu - ineq.Ju.T @ gam
            worst = max(worst, float(np.max(np.abs(ru))) if ru.size else 0.0)
            if t >= 1:
                rx = grad[t, :n] + lam[t - 1] - lq.A[t].T @ lam[t] - eq.Jx.T @ mu - ineq.Jx.T @ gam
                for j in range(N):
                    if j != i:
                        sj = slices[j]
                        psi = lq.B[j][t].T @ lam[t] - grad[t, n + sj.start:n + sj.stop]
                        rx = rx + sol.policies.gains[j][t].T @ psi
                worst = max(worst, float(np.max(np.abs(rx))))
        xT = sol.trajectory.states[T]
        rT = (lq.term_hess[i] @ xT + lq.term_grad[i] + lam[T - 1]
              - lq.eq[i][T].Jx.T @ m.eq[i][T] - lq.ineq[i][T].Jx.T @ m.ineq[i][T])
        worst = max(worst, float(np.max(np.abs(rT))))
    return worst


def player_lq_cost(lq: LQApproximation, traj: GameTrajectory, player: int) -> float:
    """Player's quadratic cost along a trajectory in deviation coordinates."""
    U = np.concatenate(traj.controls, axis=1)
    Z = np.hstack([traj.states[:-1], U])
    H, g = lq.cost_hess[player], lq.cost_grad[player]
    stage = 0.5 * np.einsum("ta,tab,tb->", Z, H, Z) + np.einsum("ta,ta->", g, Z) + float(np.sum(lq.cost_const[player]))
    xT = traj.states[-1]
    return float(stage + 0.5 * xT @ lq.term_hess[player] @ xT + lq.term_grad[player] @ xT + lq.term_const[player])


def _perturbation_response(lq: LQApproximation, sol: LQSolution, player: int):
    """Linear maps from a unit perturbation sequence of ``player`` to states and controls."""
    T, n = lq.horizon, lq.state_dim
    m = lq.control_dims[player]
    M = sum(lq.control_dims)
    sl = lq.control_slice(player)
    D = T * m
    Sx = np.zeros((T + 1, n, D))
    Su = np.zeros((T, M, D))
    K = np.concatenate(sol.policies.gains, axis=1)
    for t in range(T):
        Su[t] = -K[t] @ Sx[t]
        Su[t, sl, t * m:(t + 1) * m] += np.eye(m)
        Sx[t + 1] = lq.A[t] @ Sx[t] + lq.joint_B(t) @ Su[t]
    return Sx, Su


def nash_stationarity_check(lq: LQApproximation, sol: LQSolution, player: int,
                            direction: np.ndarray, step: float, working=frozenset()) -> float:
    """Change in ``player``'s cost when it deviates from its policy by ``step * direction``.

    The other players keep reacting through their returned affine policies.
    ``direction`` (shape ``(T, m_i)``) is first projected onto the null space
    of the player's active constraint rows along the perturbed rollout.
    """
    T, n = lq.horizon, lq.state_dim
    m = lq.control_dims[player]
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (T, m):
        raise GameInputError(f"direction must have shape {(T, m)}", "direction")
    if step == 0.0:
        return 0.0
    Sx, Su = _perturbation_response(lq, sol, player)
    d = project_direction(lq, sol, player, direction, working, (Sx, Su)).reshape(-1)
    dx = np.einsum("tnd,d->tn", Sx, d) * step
    du = np.einsum("tmd,d->tm", Su, d) * step
    base = np.hstack([sol.trajectory.states[:-1], np.concatenate(sol.trajectory.controls, axis=1)])
    dz = np.hstack([dx[:-1], du])
    H, g = lq.cost_hess[player], lq.cost_grad[player]
    grad = np.einsum("tab,tb->ta", H, base) + g
    change = np.einsum("ta,ta->", grad, dz) + 0.5 * np.einsum("ta,tab,tb->", dz, H, dz)
    xT = sol.trajectory.states[-1]
    gT = lq.term_hess[player] @ xT + lq.term_grad[player]
    change += gT @ dx[-1] + 0.5 * dx[-1] @ lq.term_hess[player] @ dx[-1]
    return float(change)


def project_direction(lq: LQApproximation, sol: LQSolution, player: int, direction: np.ndarray,
                      working=frozenset(), response=None) -> np.ndarray:
    """The constraint-respecting part of a perturbation direction (shape ``(T, m_i)``)."""
    T = lq.horizon
    m = lq.control_dims[player]
    sl = lq.control_slice(player)
    Sx, Su = response if response is not None else _perturbation_response(lq, sol, player)
    blocks = []
    for t in range(T + 1):
        rows, _ = _active(lq, player, t, working)
        if rows.count:
            sens = rows.Jx @ Sx[t]
            if t < T:
                sens = sens + rows.Ju @ Su[t, sl]
            blocks.append(sens)
    d = np.asarray(direction, dtype=float).reshape(-1)
    if blocks:
        Dmat = np.vstack(blocks)
        d = d - np.linalg.pinv(Dmat) @ (Dmat @ d)
    return d.reshape(T, m)
