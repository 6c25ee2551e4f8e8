"""Exceptions raised across the package."""

from __future__ import annotations

import numpy as np


class QOptimalError(RuntimeError):
    """Base class of every error raised by the package."""


class MarketSpecError(QOptimalError, ValueError):
    """Invalid market, probabilities, dimensions or file content."""

    def __init__(
        self, message: str, line: int | None = None, field: str | None = None
    ) -> None:
        """
        Initialize the error.

        :param message: Human readable description.
        :param line: Line of the offending input, when parsing a file.
        :param field: Name of the offending field, when known.
        """
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class InfeasibleMarketError(QOptimalError):
    """No signed martingale measure exists: the constant 1 lies in span K_0."""

    def __init__(self, message: str, distance: float | None = None) -> None:
        super().__init__(message)
        self.distance = distance


class ConvergenceError(QOptimalError):
    """A solver did not reach its gradient tolerance."""

    def __init__(
        self,
        message: str,
        best_iterate: np.ndarray,
        grad_norm: float,
        iterations: int,
    ) -> None:
        """
        Initialize the error with the solver certificate.

        :param message: Human readable description.
        :param best_iterate: Iterate with the lowest objective seen.
        :param grad_norm: Gradient norm at that iterate.
        :param iterations: Number of iterations performed.
        """
        super().__init__(message)
        self.best_iterate = best_iterate
        self.grad_norm = grad_norm
        self.iterations = iterations


class IncompatibleResultsError(QOptimalError, ValueError):
    """Results combined in one report do not come from the same problem."""


class DegenerateCandidateError(QOptimalError, ValueError):
    """Candidate density generator with non-positive expectation."""


class SimulationError(QOptimalError):
    """A simulated path left the admissible range."""

    def __init__(
        self, message: str, path_index: int | None = None, step: int | None = None
    ) -> None:
        super().__init__(message)
        self.path_index = path_index
        self.step = step
