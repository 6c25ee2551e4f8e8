"""Assembly of the q-optimal signed martingale measure from the dual projection."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd

from .core.checks import CheckReport, Residual
from .core.errors import DegenerateCandidateError, IncompatibleResultsError
from .core.market import DensityVector, ScenarioMarket
from .projection import ProjectionResult, conjugate_exponent, signed_power

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8


class Classification(Enum):
    """Sign structure of a density."""

    EQUIVALENT = "equivalent"
    ABSOLUTELY_CONTINUOUS = "absolutely-continuous"
    SIGNED = "signed"


@dataclass(frozen=True)
class ClassificationOptions:
    """Thresholds used to classify densities."""

    # Relative to max |density|.
    pos_tol: float = 1e-10


def classify(
    values: np.ndarray, options: ClassificationOptions | None = None
) -> Classification:
    """
    Classify a density as equivalent, absolutely continuous or signed.

    :param values: Density values per state.
    :param options: Thresholds.
    :return: The classification.
    """
    options = options or ClassificationOptions()
    threshold = options.pos_tol * float(np.max(np.abs(values)))
    lowest = float(np.min(values))
    if lowest > threshold:
        return Classification.EQUIVALENT
    if lowest >= -threshold:
        return Classification.ABSOLUTELY_CONTINUOUS
    return Classification.SIGNED


@dataclass(frozen=True, eq=False)
class QOptimalSolution:
    """The q-optimal measure Q* with dQ*/dP = g* / E[g*]."""

    g_star: np.ndarray
    mu: float
    density: DensityVector
    q_norm: float
    classification: Classification
    q: float
    f: np.ndarray
    g: np.ndarray
    p_norm: float

    @property
    def p(self) -> float:
        return conjugate_exponent(self.q)

    def to_frame(self, states: Sequence[str]) -> pd.DataFrame:
        """
        Per-state table of the solution.

        :param states: State names, in market order.
        :return: DataFrame with one row per state.
        """
        return pd.DataFrame(
            {
                "State": list(states),
                "Probability": self.density.reference,
                "f": self.f,
                "g": self.g,
                "g*": self.g_star,
                "Density": self.density.values,
                "Q": self.density.reference * self.density.values,
            }
        )


def _check_exponent(expected: float, q: float) -> None:
    if expected != q:
        raise IncompatibleResultsError(
            f"incompatible results: computed for q={expected}, asked for q={q}"
        )


def assemble(
    dual: ProjectionResult,
    q: float,
    options: ClassificationOptions | None = None,
) -> QOptimalSolution:
    """
    Build Q* from the dual minimiser: g* = sgn(g)|g|^(p-1), dQ*/dP = g* / E[g*].

    :param dual: Converged dual projection.
    :param q: Exponent the projection was computed for.
    :param options: Classification thresholds.
    :return: The q-optimal solution.
    :raises DegenerateCandidateError: If E[g*] <= 0, which means the dual solve failed.
    """
    _check_exponent(dual.q, q)
    p = conjugate_exponent(q)
    reference = dual.reference

    g_star = signed_power(dual.g, p - 1.0)
    mu = float(reference @ g_star)
    if not mu > 0:
        raise DegenerateCandidateError(
            f"E[g*] = {mu!r} is not positive: the dual projection did not converge"
        )

    values = g_star / mu
    values = values / float(reference @ values)
    density = DensityVector(values, reference)
    classification = classify(values, options)
    logger.info(
        "Assembled q-optimal measure at q=%g: mu=%.17g, class %s",
        q,
        mu,
        classification.value,
    )
    return QOptimalSolution(
        g_star=g_star,
        mu=mu,
        density=density,
        q_norm=density.norm(q),
        classification=classification,
        q=q,
        f=dual.f,
        g=dual.g,
        p_norm=dual.p_norm,
    )


def mu_consistency(
    sol: QOptimalSolution, q: float, tol: float = IDENTITY_TOL
) -> CheckReport:
    """
    Check E[g*] = E[|g*|^q] and E[|dQ*/dP|^q] = mu^(-q/p), each relative to its right side.

    :param sol: Assembled solution.
    :param q: Exponent.
    :param tol: Pass threshold of both residuals.
    :return: The report.
    """
    _check_exponent(sol.q, q)
    p = conjugate_exponent(q)
    reference = sol.density.reference
    moment = float(reference @ np.abs(sol.g_star) ** q)
    density_moment = float(reference @ np.abs(sol.density.values) ** q)
    return CheckReport(
        (
            Residual.relative("mu_vs_q_moment", sol.mu - moment, sol.mu, tol),
            Residual.relative(
                "density_q_moment",
                density_moment - sol.mu ** (-q / p),
                sol.mu ** (-q / p),
                tol,
            ),
        )
    )


def g_power_identity(
    dual: ProjectionResult, q: float, tol: float = IDENTITY_TOL
) -> CheckReport:
    """
    Check E[|g|^p] = E[sgn(g)|g|^(p-1)], which holds because E[g* f] = 0.

    The gap is relative to E[|g|^p].

    :param dual: Converged dual projection.
    :param q: Exponent.
    :param tol: Pass threshold.
    :return: The report.
    """
    _check_exponent(dual.q, q)
    p = conjugate_exponent(q)
    reference = dual.reference
    level = float(reference @ np.abs(dual.g) ** p)
    gap = level - float(reference @ signed_power(dual.g, p - 1.0))
    return CheckReport((Residual.relative("g_power_gap", gap, level, tol),))


def structural_identities(
    sol: QOptimalSolution, tol: float = IDENTITY_TOL
) -> CheckReport:
    """
    Check E[g*(1 - f)] = ||g||_p^p and ||dQ*/dP||_q = 1 / ||g||_p, relative to the right sides.

    :param sol: Assembled solution.
    :param tol: Pass threshold.
    :return: The report.
    """
    reference = sol.density.reference
    pairing = float(reference @ (sol.g_star * (1.0 - sol.f)))
    return CheckReport(
        (
            Residual.relative(
                "pairing_vs_p_norm", pairing - sol.p_norm**sol.p, sol.p_norm**sol.p, tol
            ),
            Residual.relative(
                "q_norm_vs_inverse_p_norm",
                sol.q_norm - 1.0 / sol.p_norm,
                1.0 / sol.p_norm,
                tol,
            ),
        )
    )


def call_payoff(market: ScenarioMarket, asset: int, strike: float) -> np.ndarray:
    """Terminal payoff of a European call on one asset."""
    if not 0 <= asset < market.n_assets:
        raise IndexError(f"Asset {asset} out of range for {market.n_assets} assets.")
    return np.maximum(market.terminal_prices()[:, asset] - strike, 0.0)


def price(sol: QOptimalSolution, payoff: np.ndarray) -> float:
    """Expectation of a terminal payoff under Q*."""
    return sol.density.expectation(np.asarray(payoff, dtype=float))
