"""Finite markets, gains and densities."""

from .errors import QOptimalError  # noqa: F401
from .market import (  # noqa: F401
    DensityVector,
    DualAffineSet,
    GainBasis,
    ScenarioMarket,
    build_one_period,
    dual_affine_set,
    gain_basis,
    martingale_affine_set,
)
