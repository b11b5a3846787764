"""Active-set loop for LQ games with inequality rows."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

import intentgame.active_set as active_set
from helpers import condensed_qp, enumerate_qp, random_lq
from intentgame.active_set import inequality_values, solve_inequality_lq_game
from intentgame.errors import ActiveSetLimitError
from intentgame.lq import LQApproximation, unconstrained_rows
from intentgame.model import StageRows


def _random_ineq_lq(seed, per_stage=1):
    rng = np.random.default_rng(seed)
    n, T = 2, 3
    rows = [(t, rng.standard_normal(n), rng.standard_normal(1) if t < T else np.zeros(0), rng.standard_normal())
            for t in range(T + 1) for _ in range(per_stage)]
    lq = random_lq(rng, [1], n, T, ineq={0: rows})
    # shift the offsets so that a random control sequence satisfies every row with slack
    _, _, G, g, keys = condensed_qp(lq)
    slack = G @ rng.standard_normal(G.shape[1]) + g - rng.uniform(0.1, 1.0, len(keys))
    ineq = list(lq.ineq[0])
    for (_, t, r), s in zip(keys, slack):
        rows_t = ineq[t]
        value = rows_t.value.copy()
        value[r] -= s
        ineq[t] = StageRows(value, rows_t.Jx, rows_t.Ju)
    return replace(lq, ineq=(tuple(ineq),))


@pytest.mark.parametrize("seed", range(20))
def test_matches_enumerated_qp(seed):
    """Controls and multipliers equal the unique KKT point found by trying every active set."""
    lq = _random_ineq_lq(seed, per_stage=2)
    H, h, G, g, keys = condensed_qp(lq)
    U, lam = enumerate_qp(H, h, G, g)
    sol, ws, _ = solve_inequality_lq_game(lq)
    assert np.abs(sol.trajectory.controls[0].reshape(-1) - U).max() <= 1e-8
    got = np.array([sol.multipliers.ineq[0][t][r] for (_, t, r) in keys])
    assert np.abs(got - lam).max() <= 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_kkt_certificate_of_returned_solution(seed):
    lq = _random_ineq_lq(seed, per_stage=2)
    sol, ws, _ = solve_inequality_lq_game(lq)
    values = inequality_values(lq, sol)
    assert sol.stationarity_residual <= 1e-8
    for key, v in values.items():
        gam = sol.multipliers.ineq[key[0]][key[1]][key[2]]
        assert v >= -1e-8
        assert gam >= -1e-8
        if key in ws.rows:
            assert abs(v) <= 1e-8
        else:
            assert gam == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_warm_start_takes_one_minor_iteration(seed):
    lq = _random_ineq_lq(seed, per_stage=2)
    sol, ws, _ = solve_inequality_lq_game(lq)
    again, ws2, minors = solve_inequality_lq_game(lq, ws)
    assert minors == 1
    assert ws2.rows == ws.rows
    assert np.array_equal(again.trajectory.states, sol.trajectory.states)


@pytest.mark.parametrize("seed", range(10))
def test_history_never_repeats_a_working_set(seed):
    lq = _random_ineq_lq(seed, per_stage=2)
    _, ws, _ = solve_inequality_lq_game(lq)
    rows, seen = frozenset(), {frozenset()}
    for action, *key in ws.history:
        rows = rows | {tuple(key)} if action == "add" else rows - {tuple(key)}
        assert rows not in seen
        seen.add(rows)
    assert rows == ws.rows


def _scalar_qp(bound):
    """One player, one stage: cost 0.5 u^2, row u - bound >= 0."""
    z = np.zeros
    eq = unconstrained_rows(1, 1, 1, [1])
    ineq = ((StageRows(np.array([-bound]), z((1, 1)), np.ones((1, 1))), StageRows(z(0), z((0, 1)), z((0, 0)))),)
    return LQApproximation(
        x0=z(1), A=np.ones((1, 1, 1)), B=(np.ones((1, 1, 1)),), c=z((1, 1)),
        cost_hess=(np.array([[[0.0, 0.0], [0.0, 1.0]]]),), cost_grad=(z((1, 2)),), cost_const=(z(1),),
        term_hess=(z((1, 1)),), term_grad=(z(1),), term_const=(0.0,), eq=eq, ineq=ineq)


def test_scalar_qp_hand_solution():
    sol, ws, minors = solve_inequality_lq_game(_scalar_qp(1.0))
    assert sol.trajectory.controls[0][0, 0] == pytest.approx(1.0, abs=1e-12)
    assert sol.multipliers.ineq[0][0][0] == pytest.approx(1.0, abs=1e-12)
    assert ws.history == (("add", 0, 0, 0),)
    assert minors == 2


def test_inactive_constraints_return_after_one_iteration():
    sol, ws, minors = solve_inequality_lq_game(_scalar_qp(-1.0))
    assert minors == 1 and not ws.rows and not ws.history
    assert sol.trajectory.controls[0][0, 0] == 0.0


def test_iteration_cap_raises_with_history():
    lq = _random_ineq_lq(1, per_stage=2)
    _, ws, minors = solve_inequality_lq_game(lq)
    assert minors > 1
    with pytest.raises(ActiveSetLimitError) as err:
        solve_inequality_lq_game(lq, max_iterations=1)
    assert "exceeded 1" in str(err.value)
    assert err.value.minor_iterations == 2


def test_default_cap_is_200():
    import inspect

    assert inspect.signature(solve_inequality_lq_game).parameters["max_iterations"].default == 200


def test_cycle_raises_instead_of_looping(monkeypatch):
    """A row that is violated when inactive and has a negative multiplier when active cycles."""
    key = (0, 0, 0)
    monkeypatch.setattr(active_set, "inequality_values", lambda lq, sol: {key: -1.0})
    monkeypatch.setattr(active_set, "_working_multipliers", lambda sol, rows: {k: -1.0 for k in rows})
    with pytest.raises(ActiveSetLimitError) as err:
        solve_inequality_lq_game(_scalar_qp(1.0), scoring="raw")
    assert "revisited" in str(err.value)
    assert err.value.history == [("add", 0, 0, 0)]


def test_tie_break_is_lexicographic():
    """Two equally violated rows: the lower (player, stage, row) index is added first."""
    lq = _scalar_qp(1.0)
    rows = lq.ineq[0][0]
    twin = StageRows(np.concatenate([rows.value, rows.value]), np.vstack([rows.Jx, rows.Jx]),
                     np.vstack([rows.Ju, rows.Ju]))
    lq = replace(lq, ineq=((twin, lq.ineq[0][1]),))
    _, ws, _ = solve_inequality_lq_game(lq)
    assert ws.history[0] == ("add", 0, 0, 0)
