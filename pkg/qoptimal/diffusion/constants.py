"""Normalising constant c_H = ln c and the pathwise identities of the diffusion model."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .simulation import (
    DEFAULT_SEED,
    Bracket,
    CoefficientFn,
    DiffusionSpec,
    PathFunctionals,
    collect_functionals,
    simulate_volatility,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChEstimate:
    """Monte Carlo estimate of c_H with its delta-method standard error."""

    value: float
    std_error: float
    n_paths: int
    closed_form: float | None = None
    # Means of E(X)_T^p and E(X)_T^(p-1), and of their difference.
    power_moment: float | None = None
    lower_moment: float | None = None
    moment_gap: float | None = None
    moment_gap_std_error: float | None = None

    def within(self, target: float, n_std: float = 3.0) -> bool:
        """True when target lies inside value +- n_std standard errors."""
        return abs(self.value - target) <= n_std * self.std_error

    @property
    def closed_form_gap(self) -> float | None:
        return None if self.closed_form is None else abs(self.value - self.closed_form)


@dataclass(frozen=True)
class MomentCheck:
    """Monte Carlo moment against its target value."""

    value: float
    std_error: float
    target: float
    n_paths: int

    def within(self, n_std: float = 3.0) -> bool:
        return abs(self.value - self.target) <= n_std * self.std_error


@dataclass(frozen=True)
class ResidualStats:
    """Per-path residual summary of the fundamental equation in logarithmic form."""

    mean_abs: float
    max_abs: float
    mean: float
    n_paths: int
    log_c: float


def _group_mean(values: np.ndarray, antithetic: bool) -> tuple[float, float]:
    """Mean and standard error; antithetic partners are averaged before the error."""
    groups = values.reshape(-1, 2).mean(axis=1) if antithetic else values
    if groups.size < 2:
        groups = values
    if groups.size < 2:
        return float(groups.mean()), float("nan")
    return float(groups.mean()), float(groups.std(ddof=1) / math.sqrt(groups.size))


def ch_deterministic(
    lambda_fn: Callable[[np.ndarray], np.ndarray | float],
    q: float,
    T: float,
    n_quad: int = 1000,
) -> float:
    """
    (q/2) int_0^T lambda(t)^2 dt by composite Simpson quadrature.

    :param lambda_fn: Market price of risk as a function of time.
    :param q: Exponent.
    :param T: Horizon.
    :param n_quad: Number of panels.
    :return: c_H for a deterministic market price of risk.
    """
    t = np.linspace(0.0, T, n_quad + 1)
    values = np.broadcast_to(np.asarray(lambda_fn(t), dtype=float), t.shape)
    return 0.5 * q * float(simpson(values**2, x=t))


def ch_on_grid(spec: DiffusionSpec, n_steps: int) -> float:
    """(q/2) sum lambda(t_k)^2 dt with left-point evaluation on the simulation grid."""
    if not spec.lambda_is_deterministic:
        raise ValueError(f"lambda of {spec.name} is not deterministic.")
    dt = spec.T / n_steps
    y = np.full(1, float(spec.y0))
    total = np.zeros(1)
    for k in range(n_steps):
        total += spec.market_price_of_risk(y, k * dt) ** 2 * dt
    return 0.5 * spec.q * float(total[0])


def _exponential_moments(
    functionals: PathFunctionals, spec: DiffusionSpec, antithetic: bool
) -> tuple[tuple[float, float], tuple[float, float], tuple[float, float]]:
    log_e = functionals.log_exponential
    lower = np.exp((spec.p - 1.0) * log_e)
    upper = np.exp(spec.p * log_e)
    return (
        _group_mean(lower, antithetic),
        _group_mean(upper, antithetic),
        _group_mean(upper - lower, antithetic),
    )


def ch_monte_carlo(
    spec: DiffusionSpec,
    eta_fn: CoefficientFn | None = None,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = DEFAULT_SEED,
    *,
    antithetic: bool = True,
    bracket: Bracket = Bracket.COMPENSATOR,
) -> ChEstimate:
    """
    Estimate c_H = -ln E[E((q-1)(eta_bar - lambda_bar) . S)_T^(p-1)].

    The p-power moment is estimated from the same paths; it equals the (p-1) moment
    at the optimum.

    :param spec: The diffusion.
    :param eta_fn: Candidate eta; zero by default.
    :param n_paths: Number of paths.
    :param n_steps: Number of time steps.
    :param seed: Root seed.
    :param antithetic: Use antithetic pairs.
    :param bracket: Quadratic variation convention.
    :return: The estimate; closed_form is set when lambda is deterministic and eta is zero.
    """
    functionals = collect_functionals(
        spec, n_paths, n_steps, seed, eta_fn=eta_fn, antithetic=antithetic, bracket=bracket
    )
    (lower, lower_se), (upper, _), (gap, gap_se) = _exponential_moments(
        functionals, spec, antithetic
    )
    closed_form = (
        ch_on_grid(spec, n_steps)
        if eta_fn is None and spec.lambda_is_deterministic
        else None
    )
    estimate = ChEstimate(
        value=-math.log(lower),
        std_error=lower_se / lower,
        n_paths=n_paths,
        closed_form=closed_form,
        power_moment=upper,
        lower_moment=lower,
        moment_gap=gap,
        moment_gap_std_error=gap_se,
    )
    logger.info(
        "c_H of %s: %.17g +- %.3g over %d paths",
        spec.name,
        estimate.value,
        estimate.std_error,
        n_paths,
    )
    return estimate


def ch_volatility_only(
    spec: DiffusionSpec,
    lambda_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = DEFAULT_SEED,
    *,
    antithetic: bool = True,
) -> ChEstimate:
    """
    Estimate c_H = -ln E[exp(-(q/2) K_T)] from the volatility state alone.

    Valid when lambda depends on (Y, t) only and Y is independent of B. Uses
    substreams disjoint from the full simulation.

    :param spec: The diffusion.
    :param lambda_fn: lambda(y, t); by default K_T comes from the simulation itself.
    :param n_paths: Number of paths.
    :param n_steps: Number of time steps.
    :param seed: Root seed.
    :param antithetic: Use antithetic pairs on W.
    :return: The estimate.
    """
    dt = spec.T / n_steps
    grid = np.linspace(0.0, spec.T, n_steps + 1)
    samples = []
    for path, k_total in simulate_volatility(
        spec, n_paths, n_steps, seed, antithetic=antithetic
    ):
        if lambda_fn is not None:
            k_total = np.zeros(path.shape[0])
            for k in range(n_steps):
                k_total += np.asarray(lambda_fn(path[:, k], grid[k])) ** 2 * dt
        samples.append(np.exp(-0.5 * spec.q * k_total))
    mean, se = _group_mean(np.concatenate(samples), antithetic)
    return ChEstimate(value=-math.log(mean), std_error=se / mean, n_paths=n_paths)


def _default_log_c(
    spec: DiffusionSpec,
    functionals: PathFunctionals,
    n_steps: int,
    antithetic: bool,
) -> float:
    if spec.lambda_is_deterministic:
        return ch_on_grid(spec, n_steps)
    (lower, _), _, _ = _exponential_moments(functionals, spec, antithetic)
    return -math.log(lower)


def pathwise_identity_check(
    spec: DiffusionSpec,
    n_paths: int = 1000,
    n_steps: int = 1000,
    seed: int = DEFAULT_SEED,
    *,
    antithetic: bool = True,
) -> float:
    """
    Largest per-path |E(-lambda . B)_T - c E(-(q-1) lambda_bar . S)_T^(p-1)|.

    Both sides use the same increments and c = exp(ch_on_grid), so the error is
    rounding-level.

    :raises ValueError: If lambda is not deterministic.
    """
    if not spec.lambda_is_deterministic:
        raise ValueError(f"lambda of {spec.name} is not deterministic.")
    f = collect_functionals(spec, n_paths, n_steps, seed, antithetic=antithetic)
    log_c = ch_on_grid(spec, n_steps)
    lhs = np.exp(-f.lambda_dB - 0.5 * f.lambda_sq)
    rhs = math.exp(log_c) * np.exp((spec.p - 1.0) * f.log_exponential)
    return float(np.max(np.abs(lhs - rhs)))


def volatility_representation_check(
    spec: DiffusionSpec,
    n_paths: int = 1000,
    n_steps: int = 200,
    seed: int = DEFAULT_SEED,
    log_c: float | None = None,
    *,
    antithetic: bool = True,
) -> float:
    """
    Largest per-path gap between c E(-(q-1) lambda_bar . S)_T^(p-1) and c exp(-(q/2) K_T) E(-lambda . B)_T.

    :raises ValueError: If lambda depends on the price.
    """
    if not spec.lambda_is_price_free:
        raise ValueError(f"lambda of {spec.name} depends on the price.")
    f = collect_functionals(spec, n_paths, n_steps, seed, antithetic=antithetic)
    if log_c is None:
        log_c = _default_log_c(spec, f, n_steps, antithetic)
    c = math.exp(log_c)
    density = c * np.exp((spec.p - 1.0) * f.log_exponential)
    represented = c * np.exp(-0.5 * spec.q * f.lambda_sq) * np.exp(
        -f.lambda_dB - 0.5 * f.lambda_sq
    )
    return float(np.max(np.abs(density - represented)))


def density_moment_check(
    spec: DiffusionSpec,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = DEFAULT_SEED,
    log_c: float | None = None,
    *,
    antithetic: bool = True,
) -> MomentCheck:
    """
    E[V^q] against c^(q-1) for the density V = c E(-(q-1) lambda_bar . S)_T^(p-1).

    :param log_c: ln c; the grid closed form for deterministic lambda, else the Monte
        Carlo estimate from the same paths.
    """
    f = collect_functionals(spec, n_paths, n_steps, seed, antithetic=antithetic)
    if log_c is None:
        log_c = _default_log_c(spec, f, n_steps, antithetic)
    moments = np.exp(spec.q * log_c + spec.p * f.log_exponential)
    value, se = _group_mean(moments, antithetic)
    return MomentCheck(
        value=value,
        std_error=se,
        target=math.exp((spec.q - 1.0) * log_c),
        n_paths=n_paths,
    )


def fundamental_eq_residual(
    spec: DiffusionSpec,
    eta_fn: CoefficientFn | None = None,
    xi_fn: CoefficientFn | None = None,
    n_paths: int = 1000,
    n_steps: int = 200,
    seed: int = DEFAULT_SEED,
    log_c: float | None = None,
    *,
    antithetic: bool = True,
    bracket: Bracket = Bracket.COMPENSATOR,
) -> ResidualStats:
    """
    Per-path log-residual of the fundamental equation for a candidate (eta, xi, c).

    The equation reads exp((q/2) lambda_bar . A^S_T) E(M^Y)_T
    = c E(eta_bar . (M^S + q A^S))_T exp(-(q-2)/2 eta_bar^2 . [M^S]_T).

    :param spec: The diffusion.
    :param eta_fn: Candidate eta; zero by default.
    :param xi_fn: Candidate xi with M^Y = xi . W; zero by default.
    :param n_paths: Number of paths.
    :param n_steps: Number of time steps.
    :param seed: Root seed.
    :param log_c: Candidate ln c; the grid closed form for deterministic lambda, else
        ch_monte_carlo on the same paths.
    :param antithetic: Use antithetic pairs.
    :param bracket: Quadratic variation convention.
    :return: Residual summary.
    """
    f = collect_functionals(
        spec,
        n_paths,
        n_steps,
        seed,
        eta_fn=eta_fn,
        xi_fn=xi_fn,
        antithetic=antithetic,
        bracket=bracket,
    )
    if log_c is None:
        log_c = _default_log_c(spec, f, n_steps, antithetic)
    q = spec.q
    log_lhs = 0.5 * q * f.lambda_sq + f.xi_dW - 0.5 * f.xi_bracket
    log_rhs = (
        log_c
        + f.eta_drive
        - 0.5 * f.eta_bracket
        - 0.5 * (q - 2.0) * f.eta_sq_ms
    )
    residual = log_lhs - log_rhs
    stats = ResidualStats(
        mean_abs=float(np.mean(np.abs(residual))),
        max_abs=float(np.max(np.abs(residual))),
        mean=float(np.mean(residual)),
        n_paths=n_paths,
        log_c=log_c,
    )
    logger.info(
        "Fundamental equation residual of %s: max %.3e", spec.name, stats.max_abs
    )
    return stats
