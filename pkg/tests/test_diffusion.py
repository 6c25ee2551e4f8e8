import math

import numpy as np
import pytest

from qoptimal.core.errors import SimulationError
from qoptimal.diffusion.coefficients import Constant, Linear, Table
from qoptimal.diffusion.constants import (
    ch_deterministic,
    ch_monte_carlo,
    ch_on_grid,
    ch_volatility_only,
    density_moment_check,
    fundamental_eq_residual,
    pathwise_identity_check,
    volatility_representation_check,
)
from qoptimal.diffusion.simulation import (
    Bracket,
    DiffusionSpec,
    collect_functionals,
    constant_spec,
    simulate,
)
from qoptimal.io.formats import load_diffusion

from .markets import DATA


def linear_spec(q: float = 3.0) -> DiffusionSpec:
    return DiffusionSpec(
        mu_fn=Linear(0.1, 0.1, "t"),
        sigma_fn=Constant(0.5),
        alpha_fn=Constant(0.0),
        beta_fn=Constant(0.0),
        rho_fn=Constant(0.0),
        s0=1.0,
        y0=0.0,
        T=1.0,
        q=q,
        name="linear",
    )


def correlated_spec(rho: float) -> DiffusionSpec:
    return DiffusionSpec(
        mu_fn=Constant(0.0),
        sigma_fn=Constant(1.0),
        alpha_fn=Linear(0.0, -1.0, "y"),
        beta_fn=Constant(0.3),
        rho_fn=Constant(rho),
        s0=0.0,
        y0=0.0,
        T=1.0,
        q=2.0,
    )


@pytest.fixture
def stochastic_volatility() -> DiffusionSpec:
    spec, _ = load_diffusion(DATA / "stochastic_volatility.toml")
    return spec


def test_coefficient_presets():
    s = np.array([1.0, 2.0])
    y = np.array([0.5, 5.0])
    np.testing.assert_allclose(Constant(2.0)(s, y, 0.3), [2.0, 2.0])
    np.testing.assert_allclose(Constant(2.0, proportional_to_s=True)(s, y, 0.3), [2.0, 4.0])
    np.testing.assert_allclose(Linear(1.0, 2.0, "t")(s, y, 0.5), [2.0, 2.0])
    np.testing.assert_allclose(Linear(0.0, 1.0, "s")(s, y, 0.0), [1.0, 2.0])
    table = Table([-1.0, 0.0, 1.0], [0.02, 0.04, 0.08], "y")
    np.testing.assert_allclose(table(s, y, 0.0), [0.06, 0.08])


def test_coefficient_dependencies():
    assert Constant(1.0).state_free
    assert Constant(1.0, proportional_to_s=True).reads_price
    assert Linear(0.0, 1.0, "y").reads_volatility
    assert not Linear(0.0, 1.0, "y").reads_price
    assert "t" in repr(Linear(0.0, 1.0, "t"))


def test_coefficient_validation():
    with pytest.raises(ValueError):
        Linear(0.0, 1.0, "x")
    with pytest.raises(ValueError):
        Table([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Table([0.0, 1.0], [1.0])


def test_spec_validation():
    assert constant_spec(0.2, 1.0, 2.0).validate() is None
    assert "q" in constant_spec(0.2, 1.0, 1.0).validate()
    assert "T" in constant_spec(0.2, 1.0, 2.0, T=0.0).validate()
    leaking = DiffusionSpec(
        mu_fn=Constant(0.0),
        sigma_fn=Constant(1.0),
        alpha_fn=Linear(0.0, 1.0, "s"),
        beta_fn=Constant(0.0),
        rho_fn=Constant(0.0),
        s0=1.0,
        y0=0.0,
        T=1.0,
        q=2.0,
    )
    assert "price" in leaking.validate()


def test_market_price_of_risk_classification(stochastic_volatility):
    assert constant_spec(0.2, 1.0, 2.0).lambda_is_deterministic
    assert linear_spec().lambda_is_deterministic
    assert stochastic_volatility.lambda_is_price_free
    assert not stochastic_volatility.lambda_is_deterministic
    np.testing.assert_allclose(
        stochastic_volatility.market_price_of_risk(np.array([-1.0, 0.0, 1.0]), 0.0),
        [0.1, 0.2, 0.4],
    )


def test_sigma_floor_raises_with_location():
    spec = constant_spec(0.0, 0.0, 2.0)
    with pytest.raises(SimulationError) as info:
        simulate(spec, 4, 10)
    assert info.value.path_index == 0
    assert info.value.step == 0


def test_antithetic_needs_even_paths():
    with pytest.raises(ValueError):
        simulate(constant_spec(0.0, 1.0, 2.0), 3, 10)


def test_driftless_price_is_a_martingale():
    bundle = simulate(constant_spec(0.0, 1.0, 2.0), 2000, 50)
    assert bundle.n_paths == 2000
    assert bundle.n_steps == 50
    assert abs(bundle.s[:, -1].mean()) < 1e-12
    np.testing.assert_array_equal(bundle.dB[0], -bundle.dB[1])


def test_integrated_squared_risk_premium():
    f = collect_functionals(constant_spec(0.2, 1.0, 2.0), 8, 100)
    np.testing.assert_allclose(f.lambda_sq, 0.04, atol=1e-12)


def test_independent_state_noise():
    bundle = simulate(correlated_spec(0.0), 1000, 100, antithetic=False)
    np.testing.assert_array_equal(bundle.dW, bundle.dZ)
    correlation = np.corrcoef(bundle.dW.ravel(), bundle.dB.ravel())[0, 1]
    assert abs(correlation) < 0.02


def test_correlated_state_noise():
    bundle = simulate(correlated_spec(0.5), 1000, 100, antithetic=False)
    correlation = np.corrcoef(bundle.dW.ravel(), bundle.dB.ravel())[0, 1]
    assert correlation == pytest.approx(0.5, abs=0.02)


def test_simulation_is_deterministic_and_block_free(stochastic_volatility):
    small = simulate(stochastic_volatility, 64, 20, seed=3, block_pairs=4)
    large = simulate(stochastic_volatility, 64, 20, seed=3, block_pairs=1024)
    np.testing.assert_array_equal(small.s, large.s)
    np.testing.assert_array_equal(small.y, large.y)
    np.testing.assert_array_equal(small.functionals.x, large.functionals.x)

    again = simulate(stochastic_volatility, 64, 20, seed=3)
    np.testing.assert_array_equal(again.dB, large.dB)
    other = simulate(stochastic_volatility, 64, 20, seed=4)
    assert not np.array_equal(other.dB, large.dB)


def test_ch_deterministic_quadrature():
    assert ch_deterministic(lambda t: 0.0 * t, 2.0, 1.0) == 0.0
    assert ch_deterministic(lambda t: 0.2, 2.0, 1.0) == pytest.approx(0.04, abs=1e-14)
    assert ch_deterministic(lambda t: t, 3.0, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_ch_on_grid_requires_deterministic_lambda(stochastic_volatility):
    assert ch_on_grid(constant_spec(0.2, 1.0, 2.0), 200) == pytest.approx(0.04, abs=1e-14)
    with pytest.raises(ValueError):
        ch_on_grid(stochastic_volatility, 200)


def test_ch_monte_carlo_constant_lambda():
    estimate = ch_monte_carlo(constant_spec(0.2, 1.0, 2.0), n_paths=100_000, n_steps=200)
    assert estimate.std_error < 0.002
    assert estimate.within(0.04)
    assert estimate.closed_form == pytest.approx(0.04, abs=1e-14)
    assert abs(estimate.moment_gap) <= 3 * estimate.moment_gap_std_error


def test_ch_monte_carlo_zero_lambda():
    estimate = ch_monte_carlo(constant_spec(0.0, 1.0, 2.0), n_paths=1000, n_steps=20)
    assert estimate.value == 0.0
    assert estimate.lower_moment == 1.0


def test_standard_error_scales_with_paths():
    spec = constant_spec(0.2, 1.0, 2.0)
    coarse = ch_monte_carlo(spec, n_paths=10_000, n_steps=20)
    fine = ch_monte_carlo(spec, n_paths=100_000, n_steps=20)
    assert coarse.std_error / fine.std_error == pytest.approx(math.sqrt(10), rel=0.2)


@pytest.mark.parametrize("n_steps", (10, 100, 1000))
def test_pathwise_identity(n_steps):
    for spec in (constant_spec(0.2, 1.0, 2.0), linear_spec()):
        assert pathwise_identity_check(spec, n_paths=200, n_steps=n_steps) < 1e-10


def test_pathwise_identity_at_full_size():
    for spec in (constant_spec(0.2, 1.0, 2.0), linear_spec()):
        assert pathwise_identity_check(spec, n_paths=1000, n_steps=1000) < 1e-10


def test_pathwise_identity_requires_deterministic_lambda(stochastic_volatility):
    with pytest.raises(ValueError):
        pathwise_identity_check(stochastic_volatility, n_paths=10, n_steps=10)


@pytest.mark.parametrize("bracket", list(Bracket))
def test_fundamental_equation_with_zero_candidate(bracket):
    for spec in (constant_spec(0.2, 1.0, 2.0), linear_spec()):
        stats = fundamental_eq_residual(spec, n_paths=200, n_steps=100, bracket=bracket)
        assert stats.max_abs < 1e-10
        assert stats.log_c == pytest.approx(ch_on_grid(spec, 100), abs=1e-15)


def test_fundamental_equation_detects_wrong_constant():
    spec = constant_spec(0.2, 1.0, 2.0)
    log_c = ch_on_grid(spec, 100) + math.log(1.01)
    stats = fundamental_eq_residual(spec, n_paths=200, n_steps=100, log_c=log_c)
    assert stats.mean_abs == pytest.approx(math.log(1.01), abs=1e-10)
    assert stats.mean == pytest.approx(-math.log(1.01), abs=1e-10)


def test_volatility_only_estimator_agrees(stochastic_volatility):
    full = ch_monte_carlo(stochastic_volatility, n_paths=20_000, n_steps=100)
    reduced = ch_volatility_only(stochastic_volatility, n_paths=20_000, n_steps=100)
    combined = math.hypot(full.std_error, reduced.std_error)
    assert abs(full.value - reduced.value) <= 3 * combined
    assert full.closed_form is None


def test_volatility_only_estimator_agrees_at_full_size(stochastic_volatility):
    full = ch_monte_carlo(stochastic_volatility, n_paths=100_000, n_steps=100)
    reduced = ch_volatility_only(stochastic_volatility, n_paths=100_000, n_steps=100)
    assert abs(full.value - reduced.value) <= 3 * math.hypot(full.std_error, reduced.std_error)


def test_volatility_only_reuses_the_simulated_risk_premium(stochastic_volatility):
    default = ch_volatility_only(stochastic_volatility, n_paths=2000, n_steps=50)
    explicit = ch_volatility_only(
        stochastic_volatility,
        stochastic_volatility.market_price_of_risk,
        n_paths=2000,
        n_steps=50,
    )
    assert default.value == pytest.approx(explicit.value, rel=1e-14)
    assert default.std_error == pytest.approx(explicit.std_error, rel=1e-12)

    doubled = ch_volatility_only(
        stochastic_volatility,
        lambda y, t: 2.0 * stochastic_volatility.market_price_of_risk(y, t),
        n_paths=2000,
        n_steps=50,
    )
    assert doubled.value > default.value


def test_volatility_representation(stochastic_volatility):
    assert volatility_representation_check(stochastic_volatility, n_paths=200, n_steps=100) < 1e-10
    assert volatility_representation_check(linear_spec(), n_paths=200, n_steps=100) < 1e-10


def test_density_moment():
    moment = density_moment_check(constant_spec(0.2, 1.0, 2.0), n_paths=100_000, n_steps=50)
    assert moment.target == pytest.approx(math.exp(0.04), abs=1e-12)
    assert moment.within()
