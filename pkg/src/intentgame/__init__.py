"""Feedback equilibria of constrained multi-hypothesis driving games."""

from __future__ import annotations

from .active_set import WorkingSet, solve_inequality_lq_game
from .errors import ActiveSetLimitError, DomainError, GameInputError, InfeasibleError, SolverError
from .hypotheses import Hypothesis, HypothesisSet, SceneDescription, VehicleState, build_game, odds_weight
from .kkt import kkt_blocks, kkt_residual, perturbation_slopes
from .lq import LQApproximation, LQSolution, solve_lq_feedback_game
from .model import (
    AffinePolicySet,
    DynamicGame,
    GameTrajectory,
    LinearDynamics,
    Player,
    SolutionMultipliers,
    evaluate_player_cost,
    rollout,
)
from .scenarios import build_scenario, compute_metrics, independent_plans, solve_scenario
from .sqp import GameSolution, SolveReport, SolveSettings, solve_gfne

__all__ = [
    "ActiveSetLimitError", "AffinePolicySet", "DomainError", "DynamicGame", "GameInputError", "GameSolution",
    "GameTrajectory", "Hypothesis", "HypothesisSet", "InfeasibleError", "LQApproximation", "LQSolution",
    "LinearDynamics", "Player", "SceneDescription", "SolutionMultipliers", "SolveReport", "SolveSettings",
    "SolverError", "VehicleState", "WorkingSet", "build_game", "build_scenario", "compute_metrics",
    "evaluate_player_cost", "independent_plans", "kkt_blocks", "kkt_residual", "odds_weight",
    "perturbation_slopes", "rollout", "solve_gfne", "solve_inequality_lq_game", "solve_lq_feedback_game",
    "solve_scenario",
]
