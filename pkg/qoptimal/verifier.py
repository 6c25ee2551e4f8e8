"""Necessary and sufficient optimality test for candidate q-optimal measures."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .core.errors import DegenerateCandidateError
from .core.linalg import weighted_distance_to_span
from .core.market import (
    DensityVector,
    GainBasis,
    MartingaleAffineSet,
    ScenarioMarket,
    martingale_affine_set,
)
from .measure import QOptimalSolution
from .projection import conjugate_exponent, signed_power

logger = logging.getLogger(__name__)


class Verdict(Enum):
    """Outcome of a verification."""

    OPTIMAL = "OPTIMAL"
    NOT_OPTIMAL = "NOT-OPTIMAL"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class VerifyOptions:
    """Tolerances and sampling setup of the verifier."""

    optimal_tol: float = 1e-8
    reject_tol: float = 1e-4
    # Largest |E[u h_j]| or |E[u] - 1| for the candidate to count as a signed martingale measure.
    measure_tol: float = 1e-8
    n_samples: int = 64
    sample_bound: float = 10.0
    seed: int = 42

    def judge(self, residual: float) -> Verdict:
        """Verdict for a residual; the band between the tolerances is inconclusive."""
        if residual < self.optimal_tol:
            return Verdict.OPTIMAL
        if residual > self.reject_tol or not np.isfinite(residual):
            return Verdict.NOT_OPTIMAL
        return Verdict.INCONCLUSIVE


@dataclass(frozen=True, eq=False)
class CandidateMeasure:
    """Candidate generator g*, claiming that g* / E[g*] is q-optimal."""

    g_star: np.ndarray
    q: float

    @classmethod
    def from_solution(cls, sol: QOptimalSolution) -> CandidateMeasure:
        return cls(g_star=sol.g_star, q=sol.q)

    def validate(self, reference: np.ndarray) -> str | None:
        """Check that the candidate can define a density."""
        if self.g_star.shape != reference.shape:
            return (
                f"Candidate has {self.g_star.size} values for "
                f"{reference.size} states."
            )
        if not float(reference @ self.g_star) > 0:
            return "E[g*] must be positive."
        return None

    def density(self, reference: np.ndarray) -> DensityVector:
        return DensityVector(self.g_star / float(reference @ self.g_star), reference)


@dataclass(frozen=True)
class VerificationReport:
    """Residuals of the optimality condition E_Q[sgn(g*)|g*|^(q-1)] = 1 for every Q."""

    membership_residual: float
    normalization_residual: float
    sampled_max_residual: float
    martingale_residual: float
    verdict: Verdict
    subspace_verdict: Verdict
    sampling_verdict: Verdict
    n_samples: int
    optimal_tol: float
    reject_tol: float
    reason: str = ""


def _sampled_residual(
    density: DensityVector,
    weight: np.ndarray,
    affine: MartingaleAffineSet,
    opts: VerifyOptions,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """Largest |E_Q[w] - 1| over random measures Q = u + V z with ||V z||_inf <= bound."""
    base = abs(density.expectation(weight) - 1.0)
    if affine.dimension == 0:
        return base, 0

    z = rng.standard_normal((opts.n_samples, affine.dimension))
    moves = z @ affine.directions.T
    sup = np.max(np.abs(moves), axis=1)
    scale = np.minimum(1.0, opts.sample_bound / np.where(sup > 0, sup, 1.0))
    measures = density.values + scale[:, None] * moves
    residuals = np.abs(measures @ (density.reference * weight) - 1.0)
    return float(max(base, residuals.max())), opts.n_samples


def verify(
    candidate: CandidateMeasure,
    market: ScenarioMarket,
    basis: GainBasis,
    opts: VerifyOptions | None = None,
    rng: np.random.Generator | None = None,
) -> VerificationReport:
    """
    Decide whether a candidate is the q-optimal signed martingale measure.

    With w = sgn(g*)|g*|^(q-1), the condition E_Q[w] = 1 for every signed martingale
    measure Q holds iff w lies in span{1, h_1..h_m} and E_{Q*}[w] = 1. Both that
    subspace test and a seeded sampling test over the affine set are run.

    :param candidate: The candidate generator g* and exponent q.
    :param market: The market.
    :param basis: Its gain basis.
    :param opts: Tolerances and sampling setup.
    :param rng: Generator for the sampling test; defaults to one seeded with opts.seed.
    :return: The verification report.
    :raises ValueError: If q <= 1.
    :raises DegenerateCandidateError: If E[g*] <= 0.
    """
    opts = opts or VerifyOptions()
    conjugate_exponent(candidate.q)
    reference = np.asarray(market.probabilities)
    if (err := candidate.validate(reference)) is not None:
        raise DegenerateCandidateError(err)

    rng = rng if rng is not None else np.random.default_rng(opts.seed)
    density = candidate.density(reference)
    affine = martingale_affine_set(market, basis)

    martingale_residual = affine.residual(density.values)
    if martingale_residual > opts.measure_tol:
        logger.info("Candidate rejected: not a signed martingale measure")
        nan = float("nan")
        return VerificationReport(
            membership_residual=nan,
            normalization_residual=nan,
            sampled_max_residual=nan,
            martingale_residual=martingale_residual,
            verdict=Verdict.NOT_OPTIMAL,
            subspace_verdict=Verdict.NOT_OPTIMAL,
            sampling_verdict=Verdict.NOT_OPTIMAL,
            n_samples=0,
            optimal_tol=opts.optimal_tol,
            reject_tol=opts.reject_tol,
            reason="not in M^s",
        )

    weight = signed_power(candidate.g_star, candidate.q - 1.0)
    spanning = np.column_stack([np.ones(market.n_states), basis.matrix])
    membership, _ = weighted_distance_to_span(weight, spanning, reference)
    normalization = abs(density.expectation(weight) - 1.0)
    sampled, n_samples = _sampled_residual(density, weight, affine, opts, rng)

    subspace_verdict = opts.judge(max(membership, normalization))
    sampling_verdict = opts.judge(sampled)
    verdict = opts.judge(max(membership, normalization, sampled))
    reason = {
        Verdict.OPTIMAL: "optimality condition holds",
        Verdict.NOT_OPTIMAL: "E_Q[sgn(g*)|g*|^(q-1)] differs from 1 for some Q",
        Verdict.INCONCLUSIVE: "residual inside the guard band",
    }[verdict]
    if verdict is Verdict.INCONCLUSIVE:
        logger.warning(
            "Inconclusive verification on %s: membership %.3e, sampled %.3e",
            market.name,
            membership,
            sampled,
        )

    return VerificationReport(
        membership_residual=membership,
        normalization_residual=normalization,
        sampled_max_residual=sampled,
        martingale_residual=martingale_residual,
        verdict=verdict,
        subspace_verdict=subspace_verdict,
        sampling_verdict=sampling_verdict,
        n_samples=n_samples,
        optimal_tol=opts.optimal_tol,
        reject_tol=opts.reject_tol,
        reason=reason,
    )


def self_consistent_impostor(
    market: ScenarioMarket,
    basis: GainBasis,
    z: np.ndarray,
    q: float,
) -> CandidateMeasure:
    """
    Candidate built from the measure u0 + V z, rescaled so that its own expectation condition holds.

    The rescaling constant c solves c^(q-1) E[|u|^q] = 1 and is found by root bracketing.

    :param market: The market.
    :param basis: Its gain basis.
    :param z: Affine parameter of the measure.
    :param q: Exponent.
    :return: The impostor candidate, satisfying E_Q[sgn(g)|g|^(q-1)] = 1 for its own Q only.
    """
    conjugate_exponent(q)
    affine = martingale_affine_set(market, basis)
    values = affine.point(z).values
    reference = np.asarray(market.probabilities)

    def self_expectation_gap(c: float) -> float:
        weight = signed_power(c * values, q - 1.0)
        return float(reference @ (values * weight)) - 1.0

    upper = 1.0
    while self_expectation_gap(upper) < 0:
        upper *= 2.0
    constant = brentq(self_expectation_gap, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return CandidateMeasure(g_star=constant * values, q=q)


@dataclass(frozen=True)
class GridOptions:
    """Setup of the brute-force oracle."""

    points: int = 41
    # Half-width of the search box; derived from the market when None.
    bound: float | None = None
    sweeps: int = 200
    xtol: float = 1e-12
    max_dimension: int = 3


def _default_bound(affine: MartingaleAffineSet, q: float) -> float:
    """Box half-width containing every z with ||u0 + V z||_q <= ||u0||_q."""
    reference = affine.reference
    level = DensityVector(affine.u0, reference).norm(q)
    return float(np.sqrt(reference.size) * level / reference.min() ** (1.0 / q))


def brute_force_oracle(
    market: ScenarioMarket,
    basis: GainBasis,
    q: float,
    grid_opts: GridOptions | None = None,
) -> DensityVector:
    """
    Minimise ||u0 + V z||_q by grid search refined with coordinate descent.

    Each sweep minimises along every coordinate and then along the sweep displacement.

    :param market: The market.
    :param basis: Its gain basis.
    :param q: Exponent.
    :param grid_opts: Grid setup.
    :return: The best density found.
    :raises ValueError: If the affine set has more than grid_opts.max_dimension dimensions.
    """
    grid_opts = grid_opts or GridOptions()
    conjugate_exponent(q)
    affine = martingale_affine_set(market, basis)
    k = affine.dimension
    if k > grid_opts.max_dimension:
        raise ValueError(
            f"Affine dimension k={k} too large for the grid oracle "
            f"(max {grid_opts.max_dimension})."
        )
    if k == 0:
        return affine.point(np.zeros(0))

    reference = affine.reference

    def objective(z: np.ndarray) -> float:
        return float(reference @ np.abs(affine.u0 + affine.directions @ z) ** q)

    bound = grid_opts.bound or _default_bound(affine, q)
    axis = np.linspace(-bound, bound, grid_opts.points)
    grid = np.array(list(itertools.product(axis, repeat=k)))
    values = np.abs(affine.u0 + grid @ affine.directions.T) ** q @ reference
    z = grid[int(np.argmin(values))].copy()
    spacing = axis[1] - axis[0]

    for sweep in range(grid_opts.sweeps):
        start = z.copy()
        for j in range(k):
            unit = np.zeros(k)
            unit[j] = 1.0
            z = _line_minimum(objective, z, unit, spacing)
        displacement = z - start
        if np.max(np.abs(displacement)) > 0:
            z = _line_minimum(objective, z, displacement, 1.0)
        if np.max(np.abs(z - start)) < grid_opts.xtol:
            logger.debug("Oracle converged after %d sweeps", sweep + 1)
            break

    return affine.point(z)


def _line_minimum(objective, z: np.ndarray, direction: np.ndarray, step: float) -> np.ndarray:
    result = minimize_scalar(
        lambda t: objective(z + t * direction),
        bracket=(0.0, step),
        method="brent",
        options={"xtol": 1e-12},
    )
    if result.fun <= objective(z):
        return z + result.x * direction
    return z
