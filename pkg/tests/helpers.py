"""Random problem generators and independent oracles shared by the tests.

The oracles here are written from textbook formulas and never call the
package's solvers: a Riccati recursion for single-player LQ problems, a dense
solve of the stacked first-order conditions of a one-stage game, and an
exhaustive active-set enumeration for small convex QPs.
"""

from __future__ import annotations

import functools
import itertools
import warnings

import numpy as np

from intentgame.lq import LQApproximation, empty_rows, unconstrained_rows
from intentgame.model import StageRows


def random_spd(rng, k, floor=0.5):
    M = rng.standard_normal((k, k))
    return M @ M.T / k + floor * np.eye(k)


def random_lq(rng, dims, n, T, eq_stage0=False, term_rows=0, ineq=None, coupled=True):
    """Random LQ game with positive-definite stage costs over ``(x, u)``.

    ``eq_stage0`` gives every player one equality row at stage 0 involving
    its own control; ``term_rows`` adds that many terminal state rows to
    player 0; ``ineq`` maps a player to a list of ``(stage, Jx, Ju, value)``
    inequality rows.
    """
    N = len(dims)
    M = sum(dims)
    A = np.stack([np.eye(n) + 0.1 * rng.standard_normal((n, n)) for _ in range(T)])
    B = tuple(np.stack([rng.standard_normal((n, m)) for _ in range(T)]) for m in dims)
    c = 0.1 * rng.standard_normal((T, n))
    hess, grad, term_h, term_g = [], [], [], []
    for _ in range(N):
        H = np.stack([random_spd(rng, n + M) for _ in range(T)])
        if not coupled:
            H[:, :n, n:] = 0.0
            H[:, n:, :n] = 0.0
        hess.append(H)
        grad.append(rng.standard_normal((T, n + M)))
        term_h.append(random_spd(rng, n))
        term_g.append(rng.standard_normal(n))
    eq = [list(r) for r in unconstrained_rows(N, T, n, dims)]
    ineq_rows = [list(r) for r in unconstrained_rows(N, T, n, dims)]
    if eq_stage0:
        for i, m in enumerate(dims):
            eq[i][0] = StageRows(rng.standard_normal(1), rng.standard_normal((1, n)), rng.standard_normal((1, m)))
    if term_rows:
        eq[0][T] = StageRows(rng.standard_normal(term_rows), rng.standard_normal((term_rows, n)),
                             np.zeros((term_rows, 0)))
    for i, rows in (ineq or {}).items():
        by_stage = {}
        for t, jx, ju, v in rows:
            by_stage.setdefault(t, []).append((jx, ju, v))
        for t, items in by_stage.items():
            mu = dims[i] if t < T else 0
            ineq_rows[i][t] = StageRows(np.array([v for _, _, v in items], dtype=float),
                                        np.array([jx for jx, _, _ in items], dtype=float).reshape(-1, n),
                                        np.array([ju for _, ju, _ in items], dtype=float).reshape(len(items), mu))
    return LQApproximation(
        x0=rng.standard_normal(n), A=A, B=B, c=c,
        cost_hess=tuple(hess), cost_grad=tuple(grad),
        cost_const=tuple(np.zeros(T) for _ in range(N)),
        term_hess=tuple(term_h), term_grad=tuple(term_g), term_const=tuple(0.0 for _ in range(N)),
        eq=tuple(tuple(r) for r in eq), ineq=tuple(tuple(r) for r in ineq_rows),
    )


def riccati_oracle(lq):
    """Textbook dynamic programming for one player: gains ``K_t``, offsets ``k_t`` with ``u = -K x - k``."""
    T, n = lq.horizon, lq.state_dim
    P = lq.term_hess[0].copy()
    p = lq.term_grad[0].copy()
    K = [None] * T
    k = [None] * T
    for t in range(T - 1, -1, -1):
        H, g = lq.cost_hess[0][t], lq.cost_grad[0][t]
        Q, S, R = H[:n, :n], H[:n, n:], H[n:, n:]
        q, r = g[:n], g[n:]
        A, B, c = lq.A[t], lq.B[0][t], lq.c[t]
        Quu = R + B.T @ P @ B
        Qux = S.T + B.T @ P @ A
        qu = r + B.T @ (P @ c + p)
        Qxx = Q + A.T @ P @ A
        qx = q + A.T @ (P @ c + p)
        K[t] = np.linalg.solve(Quu, Qux)
        k[t] = np.linalg.solve(Quu, qu)
        P = Qxx - Qux.T @ K[t]
        P = 0.5 * (P + P.T)
        p = qx - Qux.T @ k[t]
    return np.array(K), np.array(k)


def one_shot_oracle(lq):
    """Stage-0 controls of a ``T = 1`` game from one dense solve of all players' first-order conditions.

    Player ``i`` minimizes ``0.5 z'H z + g'z + 0.5 x1'Q x1 + q'x1`` with
    ``z = (x0, u)`` and ``x1 = A x0 + B u + c``, subject to its stage-0
    equality rows ``value + Jx x0 + Ju u^i = 0``.
    """
    n, N = lq.state_dim, lq.num_players
    dims = lq.control_dims
    M = sum(dims)
    x0, A, c = lq.x0, lq.A[0], lq.c[0]
    Bj = np.concatenate([b[0] for b in lq.B], axis=1)
    counts = [lq.eq[i][0].count for i in range(N)]
    size = M + sum(counts)
    mat = np.zeros((size, size))
    rhs = np.zeros(size)
    off = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    row = M
    for i in range(N):
        si = slice(off[i], off[i + 1])
        H, g = lq.cost_hess[i][0], lq.cost_grad[i][0]
        Q, q = lq.term_hess[i], lq.term_grad[i]
        Bi = lq.B[i][0]
        # d/du_i: H_uu u + H_ux x0 + g_u + Bi'(Q (A x0 + Bj u + c) + q) - Ju' mu = 0
        mat[si, :M] = H[n + off[i]:n + off[i + 1], n:] + Bi.T @ Q @ Bj
        rhs[si] = -(H[n + off[i]:n + off[i + 1], :n] @ x0 + g[n + off[i]:n + off[i + 1]] + Bi.T @ (Q @ (A @ x0 + c) + q))
        rows = lq.eq[i][0]
        k = counts[i]
        if k:
            mat[si, row:row + k] = -rows.Ju.T
            mat[row:row + k, si] = rows.Ju
            rhs[row:row + k] = -(rows.value + rows.Jx @ x0)
        row += k
    sol = np.linalg.solve(mat, rhs)
    return sol[:M]


def condensed_qp(lq):
    """Single-player LQ problem as a dense QP in the stacked controls.

    Returns ``(H, h, G, g)`` so that cost is ``0.5 U'HU + h'U + const`` and
    the inequality rows read ``G U + g >= 0``.
    """
    T, n = lq.horizon, lq.state_dim
    m = lq.control_dims[0]
    D = T * m
    # x_t = Sx[t] U + sx[t]
    Sx = np.zeros((T + 1, n, D))
    sx = np.zeros((T + 1, n))
    sx[0] = lq.x0
    for t in range(T):
        Sx[t + 1] = lq.A[t] @ Sx[t]
        Sx[t + 1][:, t * m:(t + 1) * m] += lq.B[0][t]
        sx[t + 1] = lq.A[t] @ sx[t] + lq.c[t]
    H = np.zeros((D, D))
    h = np.zeros(D)
    for t in range(T):
        Z = np.vstack([Sx[t], np.zeros((m, D))])
        Z[n:, t * m:(t + 1) * m] = np.eye(m)
        z0 = np.concatenate([sx[t], np.zeros(m)])
        Ht, gt = lq.cost_hess[0][t], lq.cost_grad[0][t]
        H += Z.T @ Ht @ Z
        h += Z.T @ (Ht @ z0 + gt)
    H += Sx[T].T @ lq.term_hess[0] @ Sx[T]
    h += Sx[T].T @ (lq.term_hess[0] @ sx[T] + lq.term_grad[0])
    G, g, keys = [], [], []
    for t in range(T + 1):
        rows = lq.ineq[0][t]
        for r in range(rows.count):
            row = rows.Jx[r] @ Sx[t]
            if t < T:
                row = row.copy()
                row[t * m:(t + 1) * m] += rows.Ju[r]
            G.append(row)
            g.append(rows.value[r] + rows.Jx[r] @ sx[t])
            keys.append((0, t, r))
    return H, h, np.array(G).reshape(-1, D), np.array(g), keys


def enumerate_qp(H, h, G, g, tol=1e-9):
    """Exact solution of a small strictly convex QP by trying every active set.

    Returns ``(U, multipliers)`` for the unique KKT point.
    """
    k = G.shape[0]
    D = H.shape[0]
    for size in range(k + 1):
        for act in itertools.combinations(range(k), size):
            act = list(act)
            Ga = G[act]
            mat = np.block([[H, -Ga.T], [Ga, np.zeros((size, size))]])
            rhs = np.concatenate([-h, -g[act]])
            try:
                sol = np.linalg.solve(mat, rhs)
            except np.linalg.LinAlgError:
                continue
            U, lam = sol[:D], sol[D:]
            if np.all(G @ U + g >= -tol) and np.all(lam >= -tol):
                full = np.zeros(k)
                full[act] = lam
                return U, full
    raise AssertionError("no KKT point found")


@functools.lru_cache(maxsize=None)
def scenario_run(scenario, p=None, p1=None, p2=None, init="independent"):
    """Cached scenario solve shared across test modules."""
    from intentgame.scenarios import solve_scenario

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_scenario(scenario, p=p, p1=p1, p2=p2, init=init)


TABLE_I = [
    ("a", dict(p=0.01)), ("a", dict(p=0.5)), ("a", dict(p=0.99)),
    ("b", dict(p=0.01)), ("b", dict(p=0.66)), ("b", dict(p=0.99)),
    ("c", dict(p1=0.99, p2=0.01)), ("c", dict(p1=0.01, p2=0.99)), ("c", dict(p1=0.99, p2=0.99)),
]
MINOR_BOUND = {"a": 30, "b": 300, "c": 400}

# acceptance lines recorded by test_acceptance.py, printed by conftest.py
ACCEPTANCE: dict = {}
