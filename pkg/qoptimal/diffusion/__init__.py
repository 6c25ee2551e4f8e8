from .coefficients import Coefficient, Constant, Linear, Table  # noqa: F401
from .constants import (  # noqa: F401
    ChEstimate,
    ch_deterministic,
    ch_monte_carlo,
    ch_volatility_only,
    density_moment_check,
    fundamental_eq_residual,
    pathwise_identity_check,
    volatility_representation_check,
)
from .simulation import Bracket, DiffusionSpec, PathBundle, simulate  # noqa: F401
