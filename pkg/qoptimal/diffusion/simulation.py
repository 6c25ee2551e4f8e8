"""Seeded Euler-Maruyama simulation of the price and volatility-state diffusion."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from ..core.errors import SimulationError
from .coefficients import Coefficient, Constant

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
DEFAULT_SEED = 42
# Substream identifiers; the volatility-only estimator never shares draws with full paths.
FULL_STREAM = 0
VOLATILITY_STREAM = 1

CoefficientFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class Bracket(Enum):
    """How quadratic variations enter stochastic exponentials on the grid."""

    # Sum of the compensators, e.g. sigma^2 dt for M^S.
    COMPENSATOR = "compensator"
    # Sum of squared discrete increments.
    REALIZED = "realized"


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """
    dS = mu(S,Y,t) dt + sigma(S,Y,t) dB, dY = alpha(Y,t) dt + beta(Y,t) dW on [0, T].

    W is correlated with B through dW = rho dB + sqrt(1 - rho^2) dZ.
    """

    mu_fn: Coefficient
    sigma_fn: Coefficient
    alpha_fn: Coefficient
    beta_fn: Coefficient
    rho_fn: Coefficient
    s0: float
    y0: float
    T: float
    q: float
    name: str = "diffusion"

    def validate(self) -> str | None:
        """Check the scalar parameters."""
        if not (math.isfinite(self.T) and self.T > 0):
            return f"Horizon T must be finite and positive, got {self.T!r}."
        if not self.q > 1:
            return f"Exponent q must exceed 1, got {self.q!r}."
        if not (math.isfinite(self.s0) and math.isfinite(self.y0)):
            return "Initial values s0 and y0 must be finite."
        if self.alpha_fn.reads_price or self.beta_fn.reads_price:
            return "The volatility-state coefficients may not depend on the price."
        return None

    @property
    def p(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def lambda_is_price_free(self) -> bool:
        """True when lambda = mu / sigma does not depend on S."""
        return (
            self.mu_fn.variable != "s"
            and self.sigma_fn.variable != "s"
            and self.mu_fn.proportional_to_s == self.sigma_fn.proportional_to_s
        )

    @property
    def lambda_is_deterministic(self) -> bool:
        """True when lambda is a function of time alone."""
        return (
            self.lambda_is_price_free
            and not self.mu_fn.reads_volatility
            and not self.sigma_fn.reads_volatility
        )

    def market_price_of_risk(self, y: np.ndarray, t: float) -> np.ndarray:
        """lambda(y, t); only defined when lambda does not depend on S."""
        if not self.lambda_is_price_free:
            raise ValueError(f"lambda of {self.name} depends on the price.")
        ones = np.ones_like(np.asarray(y, dtype=float))
        return self.mu_fn(ones, y, t) / self.sigma_fn(ones, y, t)


def _zero(s: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True, eq=False)
class PathFunctionals:
    """Per-path terminal values of the running sums used by the identity checks."""

    # int lambda dB
    lambda_dB: np.ndarray
    # K_T = int lambda^2 dt
    lambda_sq: np.ndarray
    # X_T and [X]_T for X = (q - 1)(eta_bar - lambda_bar) . S
    x: np.ndarray
    x_bracket: np.ndarray
    # int xi dW and [M^Y]_T for M^Y = xi . W
    xi_dW: np.ndarray
    xi_bracket: np.ndarray
    # eta_bar . (M^S + q A^S), its bracket and eta_bar^2 . [M^S]
    eta_drive: np.ndarray
    eta_bracket: np.ndarray
    eta_sq_ms: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> PathFunctionals:
        return cls(**{f.name: np.zeros(n) for f in fields(cls)})

    @classmethod
    def concatenate(cls, parts: list[PathFunctionals]) -> PathFunctionals:
        return cls(
            **{
                f.name: np.concatenate([getattr(part, f.name) for part in parts])
                for f in fields(cls)
            }
        )

    @property
    def n_paths(self) -> int:
        return self.x.size

    @property
    def log_exponential(self) -> np.ndarray:
        """ln E(X)_T = X_T - [X]_T / 2."""
        return self.x - 0.5 * self.x_bracket


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated paths on a uniform grid; antithetic partners are adjacent rows."""

    grid: np.ndarray
    s: np.ndarray
    y: np.ndarray
    dB: np.ndarray
    dZ: np.ndarray
    dW: np.ndarray
    functionals: PathFunctionals
    seed: int
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1


def pair_generator(seed: int, stream: int, pair: int) -> np.random.Generator:
    """Independent generator of one antithetic pair (or single path)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, pair)))


def draw_normals(
    seed: int,
    stream: int,
    first_pair: int,
    n_pairs: int,
    n_draws: int,
    antithetic: bool,
) -> np.ndarray:
    """
    Standard normals of shape (paths, n_draws) for a range of pairs.

    Each pair reads its own substream, so a block of pairs is identical whatever
    blocking was used to reach it.
    """
    draws = np.stack(
        [
            pair_generator(seed, stream, pair).standard_normal(n_draws)
            for pair in range(first_pair, first_pair + n_pairs)
        ]
    )
    if not antithetic:
        return draws
    return np.stack([draws, -draws], axis=1).reshape(2 * n_pairs, n_draws)


def _check_sizes(n_paths: int, n_steps: int, antithetic: bool) -> int:
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_paths and n_steps must be at least 1.")
    if antithetic and n_paths % 2:
        raise ValueError(f"Antithetic simulation needs an even n_paths, got {n_paths}.")
    return n_paths // 2 if antithetic else n_paths


def simulate_blocks(
    spec: DiffusionSpec,
    n_paths: int,
    n_steps: int,
    seed: int = DEFAULT_SEED,
    *,
    eta_fn: CoefficientFn | None = None,
    xi_fn: CoefficientFn | None = None,
    antithetic: bool = True,
    bracket: Bracket = Bracket.COMPENSATOR,
    block_pairs: int = 1024,
    keep_paths: bool = False,
) -> Iterator[PathBundle]:
    """
    Simulate paths block by block with left-point Euler-Maruyama steps.

    :param spec: The diffusion.
    :param n_paths: Total number of paths.
    :param n_steps: Number of uniform steps on [0, T].
    :param seed: Root seed.
    :param eta_fn: Candidate eta(s, y, t) of the fundamental equation; zero by default.
    :param xi_fn: Candidate xi(s, y, t) with M^Y = xi . W; zero by default.
    :param antithetic: Pair every path with its (-dB, -dZ) reflection.
    :param bracket: Quadratic variation convention.
    :param block_pairs: Pairs simulated per block.
    :param keep_paths: Keep the price, state and increment arrays of each block.
    :return: Iterator over blocks in path order.
    :raises SimulationError: If sigma falls below SIGMA_FLOOR or a functional is not finite.
    """
    if (err := spec.validate()) is not None:
        raise ValueError(err)
    n_pairs = _check_sizes(n_paths, n_steps, antithetic)
    eta_fn = eta_fn or _zero
    xi_fn = xi_fn or _zero
    q = spec.q
    dt = spec.T / n_steps
    root_dt = math.sqrt(dt)
    grid = np.linspace(0.0, spec.T, n_steps + 1)
    per_pair = 2 if antithetic else 1
    realized = bracket is Bracket.REALIZED

    for first in range(0, n_pairs, block_pairs):
        count = min(block_pairs, n_pairs - first)
        normals = draw_normals(seed, FULL_STREAM, first, count, 2 * n_steps, antithetic)
        dB = normals[:, :n_steps] * root_dt
        dZ = normals[:, n_steps:] * root_dt
        size = dB.shape[0]
        offset = first * per_pair

        s = np.full(size, float(spec.s0))
        y = np.full(size, float(spec.y0))
        acc = PathFunctionals.zeros(size)
        s_path = np.empty((size, n_steps + 1)) if keep_paths else None
        y_path = np.empty((size, n_steps + 1)) if keep_paths else None
        dW_all = np.empty((size, n_steps)) if keep_paths else None

        for k in range(n_steps):
            t = grid[k]
            if keep_paths:
                s_path[:, k] = s
                y_path[:, k] = y
            mu = spec.mu_fn(s, y, t)
            sigma = spec.sigma_fn(s, y, t)
            if np.any(~(sigma >= SIGMA_FLOOR)):
                bad = int(np.argmin(np.where(np.isnan(sigma), -np.inf, sigma)))
                raise SimulationError(
                    f"sigma = {sigma[bad]!r} below {SIGMA_FLOOR} "
                    f"on path {offset + bad} at step {k}",
                    path_index=offset + bad,
                    step=k,
                )
            rho = spec.rho_fn(s, y, t)
            if np.any(np.abs(rho) > 1):
                raise ValueError(f"Correlation outside [-1, 1] at step {k}.")
            dW = rho * dB[:, k] + np.sqrt(1.0 - rho**2) * dZ[:, k]

            lam = mu / sigma
            lam_bar = lam / sigma
            eta = eta_fn(s, y, t)
            xi = xi_fn(s, y, t)
            dS = mu * dt + sigma * dB[:, k]
            increment = (q - 1.0) * (eta / sigma - lam_bar) * dS
            drive = eta * dB[:, k] + q * eta * lam * dt

            acc.lambda_dB[:] += lam * dB[:, k]
            acc.lambda_sq[:] += lam**2 * dt
            acc.x[:] += increment
            acc.xi_dW[:] += xi * dW
            acc.eta_drive[:] += drive
            if realized:
                acc.x_bracket[:] += increment**2
                acc.xi_bracket[:] += (xi * dW) ** 2
                acc.eta_bracket[:] += drive**2
                acc.eta_sq_ms[:] += (eta * dB[:, k]) ** 2
            else:
                acc.x_bracket[:] += ((q - 1.0) * (eta / sigma - lam_bar) * sigma) ** 2 * dt
                acc.xi_bracket[:] += xi**2 * dt
                acc.eta_bracket[:] += eta**2 * dt
                acc.eta_sq_ms[:] += eta**2 * dt

            y = y + spec.alpha_fn(s, y, t) * dt + spec.beta_fn(s, y, t) * dW
            s = s + dS
            if keep_paths:
                dW_all[:, k] = dW

        for f in fields(acc):
            values = getattr(acc, f.name)
            if not np.all(np.isfinite(values)):
                bad = int(np.argmax(~np.isfinite(values)))
                raise SimulationError(
                    f"non-finite {f.name} on path {offset + bad}",
                    path_index=offset + bad,
                    step=n_steps,
                )

        if keep_paths:
            s_path[:, n_steps] = s
            y_path[:, n_steps] = y
        logger.debug("Simulated paths %d..%d of %s", offset, offset + size - 1, spec.name)
        yield PathBundle(
            grid=grid,
            s=s_path if keep_paths else s[:, None],
            y=y_path if keep_paths else y[:, None],
            dB=dB,
            dZ=dZ,
            dW=dW_all if keep_paths else np.empty((size, 0)),
            functionals=acc,
            seed=seed,
            antithetic=antithetic,
        )


def simulate(
    spec: DiffusionSpec,
    n_paths: int,
    n_steps: int,
    seed: int = DEFAULT_SEED,
    **kwargs,
) -> PathBundle:
    """
    Simulate full paths in memory.

    Accepts the keyword options of simulate_blocks. Results are bitwise identical for
    any block size.
    """
    blocks = list(simulate_blocks(spec, n_paths, n_steps, seed, keep_paths=True, **kwargs))
    first = blocks[0]
    return PathBundle(
        grid=first.grid,
        s=np.concatenate([b.s for b in blocks]),
        y=np.concatenate([b.y for b in blocks]),
        dB=np.concatenate([b.dB for b in blocks]),
        dZ=np.concatenate([b.dZ for b in blocks]),
        dW=np.concatenate([b.dW for b in blocks]),
        functionals=PathFunctionals.concatenate([b.functionals for b in blocks]),
        seed=seed,
        antithetic=first.antithetic,
    )


def collect_functionals(
    spec: DiffusionSpec, n_paths: int, n_steps: int, seed: int = DEFAULT_SEED, **kwargs
) -> PathFunctionals:
    """Terminal functionals of every path without keeping the paths."""
    return PathFunctionals.concatenate(
        [b.functionals for b in simulate_blocks(spec, n_paths, n_steps, seed, **kwargs)]
    )


def simulate_volatility(
    spec: DiffusionSpec,
    n_paths: int,
    n_steps: int,
    seed: int = DEFAULT_SEED,
    *,
    antithetic: bool = True,
    block_pairs: int = 1024,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """
    Simulate Y alone, driven by W directly, on its own substreams.

    :return: Iterator over blocks of (Y at grid points, K_T = int lambda^2 dt).
    """
    if (err := spec.validate()) is not None:
        raise ValueError(err)
    n_pairs = _check_sizes(n_paths, n_steps, antithetic)
    dt = spec.T / n_steps
    per_pair = 2 if antithetic else 1
    grid = np.linspace(0.0, spec.T, n_steps + 1)
    for first in range(0, n_pairs, block_pairs):
        count = min(block_pairs, n_pairs - first)
        dW = draw_normals(seed, VOLATILITY_STREAM, first, count, n_steps, antithetic)
        dW *= math.sqrt(dt)
        y = np.full(dW.shape[0], float(spec.y0))
        placeholder = np.ones_like(y)
        path = np.empty((y.size, n_steps + 1))
        k_total = np.zeros_like(y)
        for k in range(n_steps):
            t = grid[k]
            path[:, k] = y
            k_total += spec.market_price_of_risk(y, t) ** 2 * dt
            y = y + spec.alpha_fn(placeholder, y, t) * dt + spec.beta_fn(placeholder, y, t) * dW[:, k]
        path[:, n_steps] = y
        if not np.all(np.isfinite(k_total)):
            bad = int(np.argmax(~np.isfinite(k_total)))
            raise SimulationError(
                f"non-finite K_T on volatility path {first * per_pair + bad}",
                path_index=first * per_pair + bad,
                step=n_steps,
            )
        yield path, k_total


def constant_spec(mu: float, sigma: float, q: float, T: float = 1.0) -> DiffusionSpec:
    """Arithmetic Brownian motion with constant coefficients and no volatility state."""
    return DiffusionSpec(
        mu_fn=Constant(mu),
        sigma_fn=Constant(sigma),
        alpha_fn=Constant(0.0),
        beta_fn=Constant(0.0),
        rho_fn=Constant(0.0),
        s0=0.0,
        y0=0.0,
        T=T,
        q=q,
        name="constant",
    )
