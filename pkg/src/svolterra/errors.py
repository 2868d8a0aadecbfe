"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(ArithmeticError):
    """An iterative procedure stopped before meeting its tolerance.

    ``diagnostics`` carries whatever the failing routine could report
    (term counts, delta histories, offending arguments).
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class PicardConvergenceError(ConvergenceError):
    """Picard iteration hit its iteration cap; the last iterate is attached."""

    def __init__(self, message: str, deltas: list[float], result: Any = None):
        super().__init__(message, {"deltas": list(deltas)})
        self.deltas = list(deltas)
        self.result = result
