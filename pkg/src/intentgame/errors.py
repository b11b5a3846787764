"""Exception types raised across the package."""

from __future__ import annotations


class GameInputError(ValueError):
    """Malformed or dimensionally inconsistent input.

    ``field`` names the offending argument or config key when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(ArithmeticError):
    """A cost or constraint function was evaluated where it is not differentiable."""

    def __init__(self, message: str, stage: int | None = None, constraint: str | None = None):
        parts = []
        if stage is not None:
            parts.append(f"stage {stage}")
        if constraint is not None:
            parts.append(f"constraint {constraint!r}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.stage = stage
        self.constraint = constraint


class SolverError(RuntimeError):
    """The stagewise joint system could not be solved."""

    def __init__(self, message: str, stage: int | None = None, player: int | None = None):
        where = []
        if player is not None:
            where.append(f"player {player}")
        if stage is not None:
            where.append(f"stage {stage}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.stage = stage
        self.player = player


class InfeasibleError(SolverError):
    """Constraint rows exceed the control authority available to their owner."""


class ActiveSetLimitError(SolverError):
    """The active-set loop cycled or hit its iteration cap.

    ``best`` holds ``(solution, working_set, iterations)`` for the visited
    working set whose solution came closest to the LQ optimality conditions,
    or ``None`` if no equality-constrained solve succeeded.
    """

    def __init__(self, message: str, history: list | None = None, best=None):
        super().__init__(message)
        self.history = list(history or [])
        self.best = best
