"""Residuals judged against tolerances."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Residual:
    """A non-negative residual, already divided by `scale`, and the tolerance it is judged against."""

    name: str
    value: float
    tolerance: float
    scale: float = 1.0

    @classmethod
    def relative(cls, name: str, gap: float, scale: float, tolerance: float) -> Residual:
        """Residual |gap| / scale; a non-positive scale leaves the gap absolute."""
        scale = abs(scale)
        if not scale > 0:
            return cls(name, abs(gap), tolerance)
        return cls(name, abs(gap) / scale, tolerance, scale)

    @property
    def passed(self) -> bool:
        return math.isfinite(self.value) and self.value < self.tolerance


@dataclass(frozen=True)
class CheckReport:
    """Group of residuals that pass together."""

    residuals: tuple[Residual, ...]

    @property
    def passed(self) -> bool:
        return all(residual.passed for residual in self.residuals)

    def __getitem__(self, name: str) -> Residual:
        for residual in self.residuals:
            if residual.name == name:
                return residual
        raise KeyError(name)

    def __iter__(self):
        return iter(self.residuals)
