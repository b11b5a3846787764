"""Equality-constrained LQ feedback games against independent oracles."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np
import pytest

from helpers import one_shot_oracle, random_lq, riccati_oracle
from intentgame.errors import InfeasibleError, SolverError
from intentgame.lq import (
    lq_stationarity_residual,
    nash_stationarity_check,
    player_lq_cost,
    project_direction,
    solve_lq_feedback_game,
)


def test_riccati_oracle_equivalence():
    start = time.perf_counter()
    for seed in range(20):
        lq = random_lq(np.random.default_rng(seed), [2], n=4, T=10)
        K, k = riccati_oracle(lq)
        sol = solve_lq_feedback_game(lq)
        assert np.abs(sol.policies.gains[0] - K).max() <= 1e-10
        assert np.abs(sol.policies.offsets[0] - k).max() <= 1e-10
    assert time.perf_counter() - start <= 1.0


@pytest.mark.parametrize("players", [2, 3])
@pytest.mark.parametrize("with_eq", [False, True])
def test_one_shot_equivalence(players, with_eq):
    dims = [2, 1, 2][:players]
    for seed in range(20):
        lq = random_lq(np.random.default_rng(1000 * players + seed), dims, n=4, T=1, eq_stage0=with_eq)
        u = one_shot_oracle(lq)
        sol = solve_lq_feedback_game(lq)
        got = np.concatenate([c[0] for c in sol.trajectory.controls])
        assert np.abs(got - u).max() <= 1e-9


def test_zero_input_player_has_zero_gains_and_autonomous_value():
    rng = np.random.default_rng(7)
    lq = random_lq(rng, [2, 2], n=4, T=6)
    lq = replace(lq, B=(lq.B[0], np.zeros_like(lq.B[1])))
    # player 1's controls carry no cost either, so it has no reason to move
    H = np.array(lq.cost_hess[1])
    H[:, 6:, :] = 0.0
    H[:, :, 6:] = 0.0
    H[:, 6, 6] = H[:, 7, 7] = 1.0
    g = np.array(lq.cost_grad[1])
    g[:, 6:] = 0.0
    H0 = np.array(lq.cost_hess[0])
    H0[:, 6:, :] = 0.0
    H0[:, :, 6:] = 0.0
    lq = replace(lq, cost_hess=(H0, H), cost_grad=(lq.cost_grad[0], g))
    sol = solve_lq_feedback_game(lq)
    assert np.abs(sol.policies.gains[1]).max() == 0.0
    assert sol.values[1][0].value(lq.x0) == pytest.approx(player_lq_cost(lq, sol.trajectory, 1), rel=1e-10)


def _random_constrained(seed):
    rng = np.random.default_rng(seed)
    return random_lq(rng, [2, 1], n=4, T=8, eq_stage0=True, term_rows=2)


@pytest.mark.parametrize("seed", range(5))
def test_policy_trajectory_consistency_and_active_rows(seed):
    lq = _random_constrained(seed)
    sol = solve_lq_feedback_game(lq)
    x = lq.x0.copy()
    for t in range(lq.horizon):
        u = [sol.policies.control(i, t, x) for i in range(lq.num_players)]
        for i in range(lq.num_players):
            assert np.abs(u[i] - sol.trajectory.controls[i][t]).max() <= 1e-10
        x = lq.A[t] @ x + sum(lq.B[i][t] @ u[i] for i in range(lq.num_players)) + lq.c[t]
        assert np.abs(x - sol.trajectory.states[t + 1]).max() <= 1e-10 * max(1.0, np.abs(x).max())
    for i in range(lq.num_players):
        for t in range(lq.horizon + 1):
            rows = lq.eq[i][t]
            if rows.count:
                v = rows.value + rows.Jx @ sol.trajectory.states[t]
                if t < lq.horizon:
                    v = v + rows.Ju @ sol.trajectory.controls[i][t]
                assert np.abs(v).max() <= 1e-9
    assert sol.stationarity_residual <= 1e-9
    assert lq_stationarity_residual(lq, sol) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_value_matrices_symmetric(seed):
    sol = solve_lq_feedback_game(_random_constrained(seed))
    for per in sol.values:
        for v in per:
            assert np.abs(v.P - v.P.T).max() <= 1e-12


@pytest.mark.parametrize("alpha", [0.1, 10.0])
def test_scaling_covariance(alpha):
    lq = random_lq(np.random.default_rng(11), [2, 2], n=4, T=6)
    base = solve_lq_feedback_game(lq)
    scaled = replace(lq, cost_hess=(lq.cost_hess[0], alpha * lq.cost_hess[1]),
                     cost_grad=(lq.cost_grad[0], alpha * lq.cost_grad[1]),
                     term_hess=(lq.term_hess[0], alpha * lq.term_hess[1]),
                     term_grad=(lq.term_grad[0], alpha * lq.term_grad[1]))
    sol = solve_lq_feedback_game(scaled)
    for a, b in zip(base.policies.gains + base.policies.offsets, sol.policies.gains + sol.policies.offsets):
        assert np.abs(a - b).max() <= 1e-9


def test_stationarity_check_zero_step():
    lq = random_lq(np.random.default_rng(12), [2, 2], n=4, T=5)
    sol = solve_lq_feedback_game(lq)
    assert nash_stationarity_check(lq, sol, 0, np.ones((5, 2)), 0.0) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_stationarity_check_quadratic_scaling(seed):
    lq = random_lq(np.random.default_rng(seed), [2, 2], n=4, T=5)
    sol = solve_lq_feedback_game(lq)
    rng = np.random.default_rng(100 + seed)
    steps = np.array([1e-2, 1e-3, 1e-4])
    for player in range(2):
        d = rng.standard_normal((5, 2))
        change = [abs(nash_stationarity_check(lq, sol, player, d, h)) for h in steps]
        slope = np.polyfit(np.log(steps), np.log(change), 1)[0]
        assert abs(slope - 2.0) <= 0.1


@pytest.mark.parametrize("seed", range(5))
def test_stationarity_check_convex_player_cannot_improve(seed):
    lq = random_lq(np.random.default_rng(seed), [2, 1], n=4, T=6, eq_stage0=True, coupled=False)
    sol = solve_lq_feedback_game(lq)
    rng = np.random.default_rng(200 + seed)
    for player, m in enumerate(lq.control_dims):
        d = rng.standard_normal((6, m))
        assert nash_stationarity_check(lq, sol, player, d, 1e-2) >= -1e-10


def test_projected_direction_respects_active_rows():
    lq = _random_constrained(3)
    sol = solve_lq_feedback_game(lq)
    d = project_direction(lq, sol, 0, np.random.default_rng(0).standard_normal((8, 2)))
    # the projected deviation leaves player 0's rows unchanged, so the check stays quadratic
    steps = np.array([1e-2, 1e-3, 1e-4])
    change = [abs(nash_stationarity_check(lq, sol, 0, d, h)) for h in steps]
    assert abs(np.polyfit(np.log(steps), np.log(change), 1)[0] - 2.0) <= 0.1


def test_too_many_terminal_rows_is_infeasible():
    lq = random_lq(np.random.default_rng(0), [1], n=4, T=2, term_rows=3)
    with pytest.raises(InfeasibleError) as err:
        solve_lq_feedback_game(lq)
    assert err.value.player == 0


def test_singular_stage_system_reports_stage():
    lq = random_lq(np.random.default_rng(0), [1, 1], n=2, T=3)
    with pytest.raises(SolverError) as err:
        solve_lq_feedback_game(lq, cond_limit=0.5)
    assert err.value.stage == 2


def test_regularization_recorded_for_cost_free_control():
    lq = random_lq(np.random.default_rng(0), [1], n=2, T=2)
    H = np.array(lq.cost_hess[0])
    H[:, 2, :] = 0.0
    H[:, :, 2] = 0.0
    g = np.array(lq.cost_grad[0])
    g[:, 2] = 0.0
    lq = replace(lq, B=(np.zeros_like(lq.B[0]),), cost_hess=(H,), cost_grad=(g,))
    sol = solve_lq_feedback_game(lq)
    assert sol.regularization == pytest.approx(1e-8)
    assert np.abs(sol.trajectory.controls[0]).max() <= 1e-12
