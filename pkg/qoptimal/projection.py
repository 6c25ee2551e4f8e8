"""Dual L^p projection and primal L^q minimisation over signed martingale measures."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core.checks import CheckReport, Residual
from .core.errors import (
    ConvergenceError,
    IncompatibleResultsError,
    InfeasibleMarketError,
)
from .core.linalg import RANK_RTOL, min_norm_solve
from .core.market import (
    DensityVector,
    DualAffineSet,
    GainBasis,
    MartingaleAffineSet,
    ScenarioMarket,
    check_feasibility,
    dual_affine_set,
    martingale_affine_set,
)

logger = logging.getLogger(__name__)


def conjugate_exponent(q: float) -> float:
    """Return p with 1/p + 1/q = 1."""
    if not q > 1:
        raise ValueError(f"Exponent must be > 1, got {q}.")
    return q / (q - 1.0)


def signed_power(values: np.ndarray, exponent: float) -> np.ndarray:
    """sgn(x) |x|^exponent, elementwise."""
    return np.sign(values) * np.abs(values) ** exponent


def measure_to_generator(u: np.ndarray, reference: np.ndarray, q: float) -> np.ndarray:
    """g = sgn(u)|u|^(q-1) / E[|u|^q], the dual element paired with a measure u."""
    return signed_power(u, q - 1.0) / float(reference @ np.abs(u) ** q)


def generator_to_measure(g: np.ndarray, reference: np.ndarray, q: float) -> np.ndarray:
    """u = g* / E[g*] with g* = sgn(g)|g|^(p-1)."""
    g_star = signed_power(g, conjugate_exponent(q) - 1.0)
    return g_star / float(reference @ g_star)



@dataclass(frozen=True)
class SolverOptions:
    """Tolerances of the projection solvers."""

    # Stopping rule: ||grad F|| <= tol * r * F for the objective F of exponent r.
    tol: float = 1e-10
    max_iter: int = 500
    degenerate_tol: float = 1e-8
    # Lower bound on |residual| inside Hessian weights when the exponent is < 2.
    hessian_floor: float = 1e-8
    rank_rtol: float = RANK_RTOL
    newton_rtol: float = 1e-14
    armijo: float = 1e-4
    max_backtracks: int = 60


class Formulation(Enum):
    """Problem a solver actually iterated on."""

    DUAL = "dual"
    PRIMAL = "primal"


@dataclass(frozen=True, eq=False)
class PowerObjective:
    """F(x) = sum_i w_i |c_i + (M x)_i|^r, evaluated through the residual c + M x."""

    offset: np.ndarray
    matrix: np.ndarray
    weights: np.ndarray
    exponent: float

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.offset + self.matrix @ x

    def value(self, x: np.ndarray) -> float:
        return self.value_of_residual(self.residual(x))

    def value_of_residual(self, residual: np.ndarray) -> float:
        return float(self.weights @ np.abs(residual) ** self.exponent)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradient_of_residual(self.residual(x))

    def gradient_of_residual(self, residual: np.ndarray) -> np.ndarray:
        return self.exponent * self.matrix.T @ (
            self.weights * signed_power(residual, self.exponent - 1.0)
        )

    def gradient_scale(self, value: float) -> float:
        """r F, the size ||grad F|| is judged against; F is homogeneous of degree r."""
        return self.exponent * max(value, np.finfo(float).tiny)

    def hessian(self, residual: np.ndarray, floor: float) -> np.ndarray:
        magnitude = np.abs(residual)
        if self.exponent < 2:
            magnitude = np.maximum(magnitude, floor)
        curvature = self.weights * magnitude ** (self.exponent - 2.0)
        scale = self.exponent * (self.exponent - 1.0)
        return scale * (self.matrix.T * curvature) @ self.matrix


class DirectionStrategy(ABC):
    """Search direction rule."""

    name = "direction"

    @abstractmethod
    def direction(
        self, objective: PowerObjective, residual: np.ndarray, gradient: np.ndarray
    ) -> np.ndarray | None:
        """
        Propose a descent direction.

        :param objective: The objective being minimised.
        :param residual: The residual c + M x at the current iterate.
        :param gradient: The gradient at the current iterate.
        :return: A descent direction, or None when the rule has none to offer.
        """


class NewtonDirection(DirectionStrategy):
    """Minimum-norm Newton step on the (floored) Hessian."""

    name = "newton"

    def __init__(self, floor: float, rtol: float = 1e-14) -> None:
        self.floor = floor
        self.rtol = rtol

    def direction(
        self, objective: PowerObjective, residual: np.ndarray, gradient: np.ndarray
    ) -> np.ndarray | None:
        hessian = objective.hessian(residual, self.floor)
        if not np.all(np.isfinite(hessian)):
            return None
        step = min_norm_solve(hessian, -gradient, self.rtol)
        if not np.all(np.isfinite(step)) or gradient @ step >= 0:
            return None
        return step


class GradientDirection(DirectionStrategy):
    """Steepest descent."""

    name = "gradient"

    def direction(
        self, objective: PowerObjective, residual: np.ndarray, gradient: np.ndarray
    ) -> np.ndarray | None:
        return -gradient


@dataclass
class MinimizationTrace:
    """Outcome of a minimisation run."""

    x: np.ndarray
    residual: np.ndarray
    value: float
    grad_norm: float
    grad_scale: float
    iterations: int
    objective_history: list[float] = field(default_factory=list)
    step_kinds: list[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class _Iterate:
    x: np.ndarray
    residual: np.ndarray
    value: float
    gradient: np.ndarray


class PowerNormMinimizer:
    """
    Damped descent driven by a primary direction rule with a fallback rule.

    When the exponent is below 2 the primary rule sees a floored Hessian, so both
    rules are line-searched at every iteration and the lower objective wins.
    The residual is carried along and updated by each accepted step, which keeps
    it accurate relative to its own size when the minimum is small.
    """

    def __init__(
        self,
        primary: DirectionStrategy,
        fallback: DirectionStrategy,
        options: SolverOptions,
    ) -> None:
        """
        Initialize the minimizer with its strategies.

        :param primary: Rule tried first at every iteration.
        :param fallback: Rule used when the primary one fails to descend, or competing
            with it when the exponent is below 2.
        :param options: Solver tolerances.
        """
        self.primary = primary
        self.fallback = fallback
        self.options = options

    def minimize(self, objective: PowerObjective, x0: np.ndarray) -> MinimizationTrace:
        """
        Run the iteration until ||grad F|| <= tol * r * F.

        :param objective: Convex objective.
        :param x0: Starting point.
        :return: The trace of the run.
        :raises ConvergenceError: If the tolerance is not reached.
        """
        x = np.array(x0, dtype=float)
        residual = objective.residual(x)
        current = _Iterate(
            x,
            residual,
            objective.value_of_residual(residual),
            objective.gradient_of_residual(residual),
        )
        grad_norm = float(np.linalg.norm(current.gradient))
        scale = objective.gradient_scale(current.value)
        trace = MinimizationTrace(
            x, residual, current.value, grad_norm, scale, 0, [current.value]
        )
        compete = objective.exponent < 2

        while grad_norm > self.options.tol * scale and trace.iterations < self.options.max_iter:
            accepted, kind = None, None
            for strategy in (self.primary, self.fallback):
                direction = strategy.direction(objective, current.residual, current.gradient)
                if direction is None:
                    continue
                outcome = self._line_search(objective, current, direction)
                if outcome is None:
                    continue
                if accepted is None or outcome.value < accepted.value:
                    accepted, kind = outcome, strategy.name
                if not compete:
                    break

            if accepted is None:
                logger.warning(
                    "Line search stalled after %d iterations (gradient norm %.3e, scale %.3e)",
                    trace.iterations,
                    grad_norm,
                    scale,
                )
                break

            current = accepted
            grad_norm = float(np.linalg.norm(current.gradient))
            scale = objective.gradient_scale(current.value)
            trace.iterations += 1
            trace.objective_history.append(current.value)
            trace.step_kinds.append(kind)
            logger.debug(
                "iteration %d: objective %.17g, gradient norm %.3e, step %s",
                trace.iterations,
                current.value,
                grad_norm,
                kind,
            )

        trace.x, trace.residual, trace.value = current.x, current.residual, current.value
        trace.grad_norm, trace.grad_scale = grad_norm, scale
        if grad_norm > self.options.tol * scale:
            raise ConvergenceError(
                f"No convergence after {trace.iterations} iterations: gradient norm "
                f"{grad_norm:.3e} > {self.options.tol:.1e} x scale {scale:.3e}",
                best_iterate=current.x,
                grad_norm=grad_norm,
                iterations=trace.iterations,
            )
        logger.info(
            "Converged in %d iterations, gradient norm %.3e (scale %.3e)",
            trace.iterations,
            grad_norm,
            scale,
        )
        return trace

    def _line_search(
        self, objective: PowerObjective, current: _Iterate, direction: np.ndarray
    ) -> _Iterate | None:
        """Armijo backtracking; a full step is also taken when it only changes F at rounding level but shrinks the gradient."""
        slope = float(current.gradient @ direction)
        move = objective.matrix @ direction
        rounding = 64 * np.finfo(float).eps * max(1.0, abs(current.value))
        step = 1.0
        for attempt in range(self.options.max_backtracks):
            residual = current.residual + step * move
            value = objective.value_of_residual(residual)
            if np.isfinite(value):
                sufficient = value <= current.value + self.options.armijo * step * slope
                if sufficient or (attempt == 0 and value <= current.value + rounding):
                    gradient = objective.gradient_of_residual(residual)
                    if sufficient or np.linalg.norm(gradient) < np.linalg.norm(current.gradient):
                        return _Iterate(current.x + step * direction, residual, value, gradient)
            step *= 0.5
        return None


def _minimizer(options: SolverOptions) -> PowerNormMinimizer:
    return PowerNormMinimizer(
        NewtonDirection(options.hessian_floor, options.newton_rtol),
        GradientDirection(),
        options,
    )


def _dual_run(
    market: ScenarioMarket, basis: GainBasis, q: float, opts: SolverOptions
) -> tuple[DualAffineSet, PowerObjective, MinimizationTrace]:
    """Minimise E|g0 + W y|^p from g = 1, i.e. theta = 0."""
    space = dual_affine_set(market, basis, opts.rank_rtol)
    objective = PowerObjective(
        offset=space.g0,
        matrix=space.directions,
        weights=space.reference,
        exponent=conjugate_exponent(q),
    )
    start = space.coordinates(np.ones(market.n_states))
    return space, objective, _minimizer(opts).minimize(objective, start)


def _primal_run(
    market: ScenarioMarket, basis: GainBasis, q: float, opts: SolverOptions
) -> tuple[MartingaleAffineSet, PowerObjective, MinimizationTrace]:
    """Minimise E|u0 + V z|^q from z = 0."""
    affine = martingale_affine_set(market, basis, opts.rank_rtol)
    objective = PowerObjective(
        offset=affine.u0,
        matrix=affine.directions,
        weights=affine.reference,
        exponent=q,
    )
    return affine, objective, _minimizer(opts).minimize(objective, np.zeros(affine.dimension))


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """
    Minimiser f of ||1 - h||_p over span K_0, with g = 1 - f.

    grad_norm is the dual gradient norm at g and grad_scale the scale it is judged
    against. When p < 2 the iteration runs on the primal problem (see `solved_on`),
    and g is recovered from the minimal measure; iterations, objective_history and
    step_kinds then describe that run.
    """

    theta: np.ndarray
    f: np.ndarray
    g: np.ndarray
    p_norm: float
    grad_norm: float
    q: float
    reference: np.ndarray
    grad_scale: float = 1.0
    iterations: int = 0
    objective_history: tuple[float, ...] = ()
    step_kinds: tuple[str, ...] = ()
    solved_on: Formulation = Formulation.DUAL

    @property
    def p(self) -> float:
        return conjugate_exponent(self.q)

    def converged(self, tol: float) -> bool:
        return self.grad_norm <= tol * self.grad_scale

    def stationarity(self, basis: GainBasis) -> float:
        """Largest |E[sgn(g)|g|^(p-1) h_j]| over basis columns, relative to E[|g|^p]."""
        if basis.n_columns == 0:
            return 0.0
        weighted = self.reference * signed_power(self.g, self.p - 1.0)
        level = float(self.reference @ np.abs(self.g) ** self.p)
        return float(np.max(np.abs(weighted @ basis.matrix))) / level


@dataclass(frozen=True, eq=False)
class PrimalResult:
    """Signed martingale measure of minimal L^q(P)-norm."""

    u: DensityVector
    q_norm: float
    q: float
    z: np.ndarray
    grad_norm: float = 0.0
    grad_scale: float = 1.0
    iterations: int = 0
    objective_history: tuple[float, ...] = ()
    step_kinds: tuple[str, ...] = ()
    solved_on: Formulation = Formulation.PRIMAL

    def converged(self, tol: float) -> bool:
        return self.grad_norm <= tol * self.grad_scale


def dual_project(
    market: ScenarioMarket,
    basis: GainBasis,
    q: float,
    opts: SolverOptions | None = None,
) -> ProjectionResult:
    """
    Project the constant 1 onto span K_0 in L^p(P), p = q / (q - 1).

    For p >= 2, minimises F = E|1 - h|^p over h in span K_0 by damped Newton,
    starting from h = 0. For p < 2, F has unbounded curvature where g crosses zero,
    so the smooth primal problem of exponent q > 2 is solved instead and
    g = sgn(u)|u|^(q-1) / E[|u|^q] is read off the minimal measure u. Either way the
    dual gradient at g is certified against the tolerance.

    :param market: The market.
    :param basis: Its gain basis B.
    :param q: Measure exponent, > 1.
    :param opts: Solver options.
    :return: The projection result.
    :raises InfeasibleMarketError: If 1 lies in span K_0.
    :raises ConvergenceError: If the gradient tolerance is not reached.
    """
    opts = opts or SolverOptions()
    p = conjugate_exponent(q)
    reference = np.asarray(market.probabilities)

    feasibility = check_feasibility(market, basis, opts.rank_rtol)
    if not feasibility.feasible:
        raise InfeasibleMarketError(
            "1 ∈ span K_0: no signed martingale measure", feasibility.distance
        )

    if p >= 2:
        space, objective, trace = _dual_run(market, basis, q, opts)
        g = trace.residual
        solved_on = Formulation.DUAL
    else:
        affine, _, trace = _primal_run(market, basis, q, opts)
        g = measure_to_generator(trace.residual, reference, q)
        space = dual_affine_set(market, basis, opts.rank_rtol)
        objective = PowerObjective(space.g0, space.directions, reference, p)
        solved_on = Formulation.PRIMAL

    value = objective.value_of_residual(g)
    p_norm = value ** (1.0 / p)
    if p_norm < opts.degenerate_tol:
        raise InfeasibleMarketError(
            f"||g||_p = {p_norm:.3e} below {opts.degenerate_tol:.1e}: "
            "1 is numerically in the closure of K_0",
            p_norm,
        )

    grad_norm = float(np.linalg.norm(objective.gradient_of_residual(g)))
    grad_scale = objective.gradient_scale(value)
    if grad_norm > opts.tol * grad_scale:
        raise ConvergenceError(
            f"Dual gradient {grad_norm:.3e} > {opts.tol:.1e} x scale {grad_scale:.3e} "
            f"after solving the {solved_on.value} problem",
            best_iterate=space.coordinates(g),
            grad_norm=grad_norm,
            iterations=trace.iterations,
        )

    f = 1.0 - g
    theta = (
        min_norm_solve(basis.matrix, f, opts.rank_rtol)
        if basis.n_columns
        else np.zeros(0)
    )
    logger.info(
        "Dual projection of %s at q=%g via the %s problem: ||g||_p = %.17g",
        market.name,
        q,
        solved_on.value,
        p_norm,
    )
    return ProjectionResult(
        theta=theta,
        f=f,
        g=g,
        p_norm=p_norm,
        grad_norm=grad_norm,
        q=q,
        reference=reference,
        grad_scale=grad_scale,
        iterations=trace.iterations,
        objective_history=tuple(trace.objective_history),
        step_kinds=tuple(trace.step_kinds),
        solved_on=solved_on,
    )


def primal_minimize(
    market: ScenarioMarket,
    basis: GainBasis,
    q: float,
    opts: SolverOptions | None = None,
) -> PrimalResult:
    """
    Minimise ||u||_q over the signed martingale measures u0 + V z.

    For q >= 2 damped Newton runs on G(z) = E|u0 + V z|^q from z = 0. For q < 2 the
    smooth dual problem of exponent p > 2 is solved and u = g* / E[g*] is read off the
    dual minimiser. The primal gradient at u is certified either way.

    :param market: The market.
    :param basis: Its gain basis.
    :param q: Exponent, > 1.
    :param opts: Solver options.
    :return: The primal result.
    :raises InfeasibleMarketError: If there is no signed martingale measure.
    :raises ConvergenceError: If the gradient tolerance is not reached.
    """
    opts = opts or SolverOptions()
    conjugate_exponent(q)

    if q >= 2:
        affine, objective, trace = _primal_run(market, basis, q, opts)
        z = trace.x
        u = DensityVector(trace.residual, affine.reference)
        solved_on = Formulation.PRIMAL
    else:
        affine = martingale_affine_set(market, basis, opts.rank_rtol)
        objective = PowerObjective(affine.u0, affine.directions, affine.reference, q)
        if affine.dimension == 0:
            trace = _minimizer(opts).minimize(objective, np.zeros(0))
            z = trace.x
            u = DensityVector(trace.residual, affine.reference)
            solved_on = Formulation.PRIMAL
        else:
            _, _, trace = _dual_run(market, basis, q, opts)
            values = generator_to_measure(trace.residual, affine.reference, q)
            # z is the nearest parameter; u keeps the exact image of g.
            z = affine.directions.T @ (values - affine.u0)
            u = DensityVector(values, affine.reference)
            solved_on = Formulation.DUAL

    value = objective.value_of_residual(u.values)
    grad_norm = float(np.linalg.norm(objective.gradient_of_residual(u.values)))
    grad_scale = objective.gradient_scale(value)
    if grad_norm > opts.tol * grad_scale:
        raise ConvergenceError(
            f"Primal gradient {grad_norm:.3e} > {opts.tol:.1e} x scale {grad_scale:.3e} "
            f"after solving the {solved_on.value} problem",
            best_iterate=z,
            grad_norm=grad_norm,
            iterations=trace.iterations,
        )
    return PrimalResult(
        u=u,
        q_norm=value ** (1.0 / q),
        q=q,
        z=z,
        grad_norm=grad_norm,
        grad_scale=grad_scale,
        iterations=trace.iterations,
        objective_history=tuple(trace.objective_history),
        step_kinds=tuple(trace.step_kinds),
        solved_on=solved_on,
    )


def duality_certificate(
    dual: ProjectionResult, primal: PrimalResult, tol: float = 1e-8
) -> CheckReport:
    """
    Certify strong duality ||u*||_q = 1 / ||g||_p.

    The gap is |q_norm - 1/p_norm| relative to 1/p_norm, i.e. |q_norm p_norm - 1|.

    :param dual: Dual projection result.
    :param primal: Primal result for the same market and exponent.
    :param tol: Pass threshold of the gap.
    :return: The certificate.
    :raises IncompatibleResultsError: If the results disagree on q or on the states.
    """
    if dual.q != primal.q:
        raise IncompatibleResultsError(
            f"incompatible results: dual q={dual.q}, primal q={primal.q}"
        )
    if dual.g.shape != primal.u.values.shape:
        raise IncompatibleResultsError("incompatible results: state counts differ")
    return CheckReport(
        (
            Residual.relative(
                "duality_gap", primal.q_norm - 1.0 / dual.p_norm, 1.0 / dual.p_norm, tol
            ),
        )
    )
