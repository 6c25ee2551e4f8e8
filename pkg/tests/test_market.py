import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qoptimal.core.errors import InfeasibleMarketError, MarketSpecError
from qoptimal.core.linalg import column_projector
from qoptimal.core.market import (
    DensityVector,
    GainBasis,
    Node,
    build_one_period,
    build_tree,
    check_feasibility,
    density_process,
    dual_affine_set,
    gain_basis,
    martingale_affine_set,
)

from .markets import CORPUS_SHAPES, random_market


def test_build_one_period_trinomial(trinomial):
    assert trinomial.n_states == 3
    assert trinomial.n_assets == 1
    assert trinomial.horizon == 1
    assert trinomial.states == ("w1", "w2", "w3")
    np.testing.assert_allclose(trinomial.terminal_prices()[:, 0], [2.0, 1.0, 0.5])


def test_build_one_period_rejects_bad_probabilities():
    with pytest.raises(MarketSpecError, match="sum"):
        build_one_period([1.0], [2.0, 0.5], [0.5, 0.6])
    with pytest.raises(MarketSpecError):
        build_one_period([1.0], [2.0, 0.5], [1.0, 0.0])


def test_build_one_period_rejects_dimension_mismatch():
    with pytest.raises(MarketSpecError):
        build_one_period([1.0, 1.0], [2.0, 0.5], [0.5, 0.5])
    with pytest.raises(MarketSpecError):
        build_one_period([1.0], [2.0, 1.0, 0.5], [0.5, 0.5])


def test_build_tree_validation():
    with pytest.raises(MarketSpecError, match="at least 2 children"):
        build_tree(
            [
                Node("root", (1.0,)),
                Node("a", (1.0,), "root"),
                Node("b", (2.0,), "a", 0.5),
                Node("c", (0.5,), "a", 0.5),
            ]
        )
    with pytest.raises(MarketSpecError, match="same date"):
        build_tree(
            [
                Node("root", (1.0,)),
                Node("a", (1.5,), "root", 0.5),
                Node("b", (0.5,), "root"),
                Node("c", (1.0,), "b", 0.25),
                Node("d", (0.2,), "b", 0.25),
            ]
        )
    with pytest.raises(MarketSpecError, match="non-finite"):
        build_one_period([1.0], [np.inf, 0.5], [0.5, 0.5])


def test_gain_basis_one_period(binomial, trinomial):
    np.testing.assert_allclose(gain_basis(binomial).matrix[:, 0], [1.0, -0.5])
    np.testing.assert_allclose(gain_basis(trinomial).matrix[:, 0], [1.0, 0.0, -0.5])


def test_gain_basis_two_period(two_period):
    basis = gain_basis(two_period)
    assert basis.n_columns == 3
    assert [d.node for d in basis.descriptors] == ["root", "u", "d"]
    np.testing.assert_allclose(basis.matrix[:, 0], [1.0, 1.0, -0.5, -0.5])
    np.testing.assert_allclose(basis.matrix[:, 1], [2.0, -1.0, 0.0, 0.0])
    np.testing.assert_allclose(basis.matrix[:, 2], [0.0, 0.0, 0.5, -0.25])


def test_affine_set_binomial_is_a_point(binomial):
    affine = martingale_affine_set(binomial, gain_basis(binomial))
    assert affine.dimension == 0
    np.testing.assert_allclose(affine.u0, [2 / 3, 4 / 3], atol=1e-12)


def test_affine_set_trinomial(trinomial):
    affine = martingale_affine_set(trinomial, gain_basis(trinomial))
    assert affine.dimension == 1


def test_affine_set_infeasible(infeasible):
    basis = gain_basis(infeasible)
    with pytest.raises(InfeasibleMarketError, match="no signed martingale measure"):
        martingale_affine_set(infeasible, basis)
    assert not check_feasibility(infeasible, basis).feasible


@pytest.mark.parametrize("shape", CORPUS_SHAPES)
def test_dual_coset_is_orthonormal_in_l2(shape):
    market = random_market(*shape)
    basis = gain_basis(market)
    space = dual_affine_set(market, basis)
    reference = np.asarray(market.probabilities)
    gram = space.directions.T @ (reference[:, None] * space.directions)
    np.testing.assert_allclose(gram, np.eye(space.dimension), atol=1e-10)
    np.testing.assert_allclose(space.directions.T @ (reference * space.g0), 0.0, atol=1e-10)
    assert space.dimension == basis.rank()

    # 1 lies in the coset, and so does 1 - h for every gain h.
    ones = np.ones(market.n_states)
    np.testing.assert_allclose(space.point(space.coordinates(ones)), ones, atol=1e-10)
    h = basis.matrix[:, 0]
    np.testing.assert_allclose(space.point(space.coordinates(ones - h)), ones - h, atol=1e-10)


def test_dual_coset_without_gains_is_the_constant(trinomial):
    empty = GainBasis(np.zeros((3, 0)), ())
    space = dual_affine_set(trinomial, empty)
    assert space.dimension == 0
    np.testing.assert_allclose(space.point(np.zeros(0)), np.ones(3))


def test_feasibility_of_trinomial(trinomial):
    report = check_feasibility(trinomial, gain_basis(trinomial))
    assert report.feasible
    assert report.distance > 0.1


@pytest.mark.parametrize("shape", CORPUS_SHAPES)
def test_affine_dimension_matches_rank_oracle(shape):
    market = random_market(*shape)
    basis = gain_basis(market)
    affine = martingale_affine_set(market, basis)
    stacked = np.column_stack([np.ones(market.n_states), basis.matrix])
    assert affine.dimension == market.n_states - np.linalg.matrix_rank(stacked)


@settings(max_examples=30, deadline=None)
@given(shape=st.sampled_from(CORPUS_SHAPES), seed=st.integers(0, 2**32 - 1))
def test_affine_points_are_signed_martingale_measures(shape, seed):
    market = random_market(*shape)
    basis = gain_basis(market)
    affine = martingale_affine_set(market, basis)
    u = affine.point(np.random.default_rng(seed).uniform(-5, 5, affine.dimension))
    weighted = np.asarray(market.probabilities) * u.values
    assert abs(weighted.sum() - 1.0) < 1e-12
    assert np.max(np.abs(weighted @ basis.matrix)) < 1e-10


def test_gain_span_is_invariant_under_node_order(two_period):
    rng = np.random.default_rng(7)
    shuffled = build_tree([two_period.nodes[i] for i in rng.permutation(len(two_period.nodes))])
    base = gain_basis(two_period).matrix
    other = gain_basis(shuffled).matrix
    rows = [shuffled.states.index(state) for state in two_period.states]
    np.testing.assert_allclose(
        column_projector(base), column_projector(other[rows]), atol=1e-12
    )


def test_density_process_of_binomial_measure(binomial):
    affine = martingale_affine_set(binomial, gain_basis(binomial))
    process = density_process(binomial, affine.point([]))
    assert process.values["root"] == pytest.approx(1.0)
    assert process.transitions[("root", "w1")] == pytest.approx(1 / 3)
    assert process.transitions[("root", "w2")] == pytest.approx(2 / 3)
    assert len(process.to_frame()) == 2


def test_density_vector_norm_and_validation(trinomial):
    reference = np.asarray(trinomial.probabilities)
    density = DensityVector(np.ones(3), reference)
    assert density.validate() is None
    assert density.norm(3.0) == pytest.approx(1.0)
    assert DensityVector(np.full(3, 2.0), reference).validate() is not None


def test_market_frame(two_period):
    frame = two_period.to_frame()
    assert list(frame["Node"]) == ["root", "u", "d", "uu", "ud", "du", "dd"]
    assert frame["Probability"].sum() == pytest.approx(1.0)
