"""Shared markets for the test suite."""

from __future__ import annotations

import pytest

from qoptimal.core.market import Node, ScenarioMarket, build_one_period, build_tree

from .markets import CORPUS_SHAPES, random_market


@pytest.fixture
def trinomial() -> ScenarioMarket:
    return build_one_period([1.0], [2.0, 1.0, 0.5], [1 / 3, 1 / 3, 1 / 3], name="trinomial")


@pytest.fixture
def binomial() -> ScenarioMarket:
    return build_one_period([1.0], [2.0, 0.5], [0.5, 0.5], name="binomial")


@pytest.fixture
def zero_drift() -> ScenarioMarket:
    return build_one_period([1.0], [1.5, 0.5], [0.5, 0.5], name="zero-drift")


@pytest.fixture
def two_period() -> ScenarioMarket:
    return build_tree(
        [
            Node("root", (1.0,)),
            Node("u", (2.0,), "root"),
            Node("d", (0.5,), "root"),
            Node("uu", (4.0,), "u", 0.25),
            Node("ud", (1.0,), "u", 0.25),
            Node("du", (1.0,), "d", 0.25),
            Node("dd", (0.25,), "d", 0.25),
        ],
        name="two-period",
    )


@pytest.fixture
def infeasible() -> ScenarioMarket:
    return build_one_period([1.0], [2.0, 2.0], [0.5, 0.5], name="infeasible")


@pytest.fixture(params=CORPUS_SHAPES, ids=lambda shape: "random-{}-{}x{}x{}".format(*shape))
def corpus_market(request) -> ScenarioMarket:
    return random_market(*request.param)
