"""Coefficient presets of the univariate diffusion model."""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Sequence

import numpy as np

VARIABLES = ("t", "y", "s")


class Coefficient(ABC):
    """Coefficient c(s, y, t) built from a profile in one state variable."""

    def __init__(self, variable: str = "t", proportional_to_s: bool = False) -> None:
        """
        Initialize the coefficient.

        :param variable: State variable the profile reads: "t", "y" or "s".
        :param proportional_to_s: Multiply the profile by the current price s.
        """
        if variable not in VARIABLES:
            raise ValueError(f"Unknown variable {variable!r}; expected one of {VARIABLES}.")
        self.variable = variable
        self.proportional_to_s = proportional_to_s

    def __call__(self, s: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        """Evaluate on arrays of prices and volatility states at time t."""
        s = np.asarray(s, dtype=float)
        argument = {"t": np.full_like(s, t), "y": np.asarray(y, dtype=float), "s": s}[
            self.variable
        ]
        values = np.broadcast_to(self._profile(argument), s.shape).astype(float)
        return values * s if self.proportional_to_s else values

    @abstractmethod
    def _profile(self, x: np.ndarray) -> np.ndarray:
        """Profile in the coefficient's variable."""

    @property
    def reads_price(self) -> bool:
        return self.variable == "s" or self.proportional_to_s

    @property
    def reads_volatility(self) -> bool:
        return self.variable == "y"

    @property
    def state_free(self) -> bool:
        """True when the coefficient depends on time only."""
        return not (self.reads_price or self.reads_volatility)

    def __repr__(self) -> str:
        suffix = " * s" if self.proportional_to_s else ""
        return f"{self.__class__.__name__}({self._describe()}){suffix}"

    @abstractmethod
    def _describe(self) -> str:
        """Parameter summary for the representation."""


class Constant(Coefficient):
    """Constant profile."""

    def __init__(self, value: float, proportional_to_s: bool = False) -> None:
        super().__init__("t", proportional_to_s)
        self.value = float(value)

    def _profile(self, x: np.ndarray) -> np.ndarray:
        return np.full_like(x, self.value)

    def _describe(self) -> str:
        return f"{self.value!r}"


class Linear(Coefficient):
    """Affine profile a + b x."""

    def __init__(
        self,
        intercept: float,
        slope: float,
        variable: str = "t",
        proportional_to_s: bool = False,
    ) -> None:
        super().__init__(variable, proportional_to_s)
        self.intercept = float(intercept)
        self.slope = float(slope)

    def _profile(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + self.slope * x

    def _describe(self) -> str:
        return f"{self.intercept!r} + {self.slope!r} {self.variable}"


class Table(Coefficient):
    """Piecewise-linear interpolation of tabulated values, flat outside the knots."""

    def __init__(
        self,
        knots: Sequence[float],
        values: Sequence[float],
        variable: str = "t",
        proportional_to_s: bool = False,
    ) -> None:
        super().__init__(variable, proportional_to_s)
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape:
            raise ValueError("Table knots and values must be 1-D of equal length.")
        if self.knots.size < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("Table knots must be strictly increasing, at least two.")

    def _profile(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.knots, self.values)

    def _describe(self) -> str:
        return f"{self.knots.size} knots in {self.variable}"
