"""Replica game construction: odds weights, player layout and constraint assignment."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import scenario_run
from intentgame.errors import GameInputError
from intentgame.hypotheses import (
    P_MAX,
    AgentInit,
    Hypothesis,
    HypothesisSet,
    SceneDescription,
    VehicleState,
    build_game,
    odds_weight,
)
from intentgame.model import EllipseSeparation, GameTrajectory, constraint_values, evaluate_player_cost
from intentgame.scenarios import (
    _own_objective_cost,
    build_scenario,
    independent_plans,
    scenario_double_lane_change,
    scenario_passing,
)
from intentgame.sqp import solve_gfne


def test_odds_weight_examples():
    assert odds_weight(0.5) == 1.0
    assert odds_weight(0.99) == pytest.approx(99.0, rel=1e-12)
    assert odds_weight(0.66) == pytest.approx(1.9412, abs=1e-4)


@pytest.mark.parametrize("p,expected", [(0.0, 1e-3 / (1 - 1e-3)), (1.0, 999.0)])
def test_odds_weight_clamps_with_warning(p, expected):
    with pytest.warns(RuntimeWarning, match="clamped"):
        assert odds_weight(p) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
def test_odds_weight_rejects_non_probabilities(p):
    with pytest.raises(GameInputError):
        odds_weight(p)


def _one_agent_scene():
    ego = VehicleState(0.0, 3.7, 20.0)
    return SceneDescription(ego, 20.0, (AgentInit("red", VehicleState(30.0, 0.0, 10.0)),))


def test_single_hypothesis_degenerate_case():
    hyps = HypothesisSet({"red": (Hypothesis("only", 1.0, 10.0),)})
    with pytest.warns(RuntimeWarning):
        game, index = build_game(_one_agent_scene(), hyps)
    assert game.num_players == 2
    assert abs(index[1].weight - 999.0) <= 1e-9


def test_scenario_a_layout():
    _, _, game, index = build_scenario("a", p=0.5)
    assert game.num_players == 3
    assert [(i.agent, i.hypothesis) for i in index] == [("ego", None), ("red", "lane_change"), ("red", "stay")]
    assert not any(isinstance(c, EllipseSeparation) for c in game.players[0].constraints)
    for i in (1, 2):
        ells = [c for c in game.players[i].constraints if isinstance(c, EllipseSeparation)]
        assert len(ells) == 1
        assert ells[0].first == (0, 1) and ells[0].second == (4 * i, 4 * i + 1)
        assert ells[0].stages == frozenset(range(game.horizon + 1))


def test_scenario_c_has_five_players_and_four_politeness_terms():
    p1, p2 = 0.3, 0.8
    scene, hyps, game, index = build_scenario("c", p1=p1, p2=p2)
    assert game.num_players == 5
    weights = sorted(i.weight for i in index[1:])
    expected = sorted(odds_weight(p) for p in (p1, 1 - p1, p2, 1 - p2))
    assert np.allclose(weights, expected, rtol=0, atol=1e-12)
    # ego stage cost: own control effort and speed terms plus two per replica, each scaled by its odds
    assert len(game.players[0].stage_cost.terms) == 2 * 5
    for info in index[1:]:
        scaled = [t for t in game.players[0].stage_cost.terms
                  if getattr(t, "offset", None) == info.control_offset]
        assert len(scaled) == 1 and scaled[0].weight == pytest.approx(info.weight * scene.control_weight)
    # replicas of different agents carry no mutual constraints
    for info in index[1:]:
        for c in game.players[info.index].constraints:
            if isinstance(c, EllipseSeparation):
                assert c.first == (0, 1)


def test_inconsistent_agent_sets_rejected():
    hyps = HypothesisSet({"blue": (Hypothesis("only", 1.0, 10.0),)})
    with pytest.raises(GameInputError):
        build_game(_one_agent_scene(), hyps)


def test_hypothesis_set_invariants():
    with pytest.raises(GameInputError):
        HypothesisSet({"red": ()})
    with pytest.raises(GameInputError):
        HypothesisSet({"red": (Hypothesis("a", 0.5, 1.0), Hypothesis("b", 0.4, 1.0))})


@settings(max_examples=25, deadline=None)
@given(p1=st.floats(0.01, 0.99), p2=st.floats(0.01, 0.99), seed=st.integers(0, 2**31 - 1))
def test_ego_cost_is_own_plus_weighted_replica_costs(p1, p2, seed):
    scene, hyps, game, index = build_scenario("c", p1=p1, p2=p2)
    rng = np.random.default_rng(seed)
    T = game.horizon
    traj = GameTrajectory(game.initial_state + 5 * rng.standard_normal((T + 1, game.state_dim)),
                          tuple(rng.standard_normal((T, m)) for m in game.control_dims))
    total = evaluate_player_cost(game, traj, 0)
    parts = _own_objective_cost(scene, index, traj, 0)
    for info in index[1:]:
        parts += info.weight * evaluate_player_cost(game, traj, info.index)
    assert abs(total - parts) <= 1e-10 * max(1.0, abs(total))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_replica_independence(seed):
    """A replica's cost and constraints ignore every block but its own and the ego's."""
    _, _, game, index = build_scenario("c", p1=0.5, p2=0.5)
    rng = np.random.default_rng(seed)
    T = game.horizon
    traj = GameTrajectory(game.initial_state + rng.standard_normal((T + 1, game.state_dim)),
                          tuple(rng.standard_normal((T, m)) for m in game.control_dims))
    for info in index[1:]:
        keep = {0, info.index}
        states = np.array(traj.states)
        controls = [np.array(c) for c in traj.controls]
        for other in index:
            if other.index not in keep:
                states[:, 4 * other.index:4 * other.index + 4] += rng.standard_normal((T + 1, 4))
                controls[other.index] += rng.standard_normal(controls[other.index].shape)
        moved = GameTrajectory(states, tuple(controls))
        assert evaluate_player_cost(game, moved, info.index) == evaluate_player_cost(game, traj, info.index)
        a, b = constraint_values(game, traj, info.index), constraint_values(game, moved, info.index)
        for x, y in zip(a.eq + a.ineq, b.eq + b.ineq):
            assert np.array_equal(x, y)


def test_low_probability_limit_matches_game_without_politeness():
    """At p_min the ego plans as if the lane-change replica's politeness term were absent."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scene, hyps = scenario_passing(0.0)
        full, index = build_game(scene, hyps)
        reduced, _ = build_game(scene, hyps, exclude_politeness=[index[1].name])
        a = solve_gfne(full, independent_plans(scene, index))
        b = solve_gfne(reduced, independent_plans(scene, index))
    assert a.report.converged and b.report.converged
    diff = float(np.abs(a.trajectory.states[:, :4] - b.trajectory.states[:, :4]).max())
    assert diff <= 1e-3, f"ego states differ by {diff:.3e}"


def test_high_probability_limit_replica_near_solo_optimum():
    run = scenario_run("a", p=1.0)
    from intentgame.scenarios import compute_metrics

    m = compute_metrics(run.solution.trajectory, run.game, run.scene, run.index)
    name = run.index[1].name
    assert m.own_cost[name] <= 1.01 * m.solo_cost[name]


def test_scenario_c_builder_uses_given_probabilities():
    _, hyps = scenario_double_lane_change(0.2, 0.7)
    assert [h.probability for h in hyps.agents["red"]] == [0.2, pytest.approx(0.8)]
    assert [h.probability for h in hyps.agents["green"]] == [0.7, pytest.approx(0.3)]
    assert P_MAX == 1 - 1e-3
