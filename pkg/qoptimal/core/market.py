"""Finite scenario markets, their simple trading gains and signed martingale measures."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd

from .errors import InfeasibleMarketError, MarketSpecError
from .linalg import (
    RANK_RTOL,
    min_norm_solve,
    numerical_rank,
    range_and_null_space,
    weighted_distance_to_span,
)

logger = logging.getLogger(__name__)

PROBABILITY_TOL = 1e-12
CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class Node:
    """Node of a scenario tree."""

    name: str
    prices: tuple[float, ...]
    parent: str | None = None
    probability: float | None = None


@dataclass(frozen=True, eq=False)
class ScenarioMarket:
    """
    Finite discrete-time market on a scenario tree.

    Terminal nodes are the states of the probability space. Only terminal nodes
    carry a reference probability; interior probabilities are sums over the
    subtree.
    """

    nodes: tuple[Node, ...]
    name: str = "market"

    def validate(self) -> str | None:
        """Validate whether the tree describes a market."""
        if not self.nodes:
            return "Market has no nodes."

        names = [node.name for node in self.nodes]
        if len(set(names)) != len(names):
            return "Node names must be unique."

        roots = [node for node in self.nodes if node.parent is None]
        if len(roots) != 1:
            return f"Market must have exactly one root node, found {len(roots)}."

        known = set(names)
        for node in self.nodes:
            if node.parent is not None and node.parent not in known:
                return f"Node '{node.name}' has unknown parent '{node.parent}'."

        dimension = len(roots[0].prices)
        if dimension == 0:
            return "Nodes must carry at least one asset price."
        for node in self.nodes:
            if len(node.prices) != dimension:
                return (
                    f"Node '{node.name}' has {len(node.prices)} prices, "
                    f"expected {dimension}."
                )
            if not np.all(np.isfinite(node.prices)):
                return f"Node '{node.name}' has non-finite prices."

        children = self._children_of(self.nodes)
        reachable = self._walk(roots[0].name, children)
        if len(reachable) != len(self.nodes):
            return "Every node must be reachable from the root."

        for node in self.nodes:
            kids = children.get(node.name, ())
            if kids and len(kids) < 2:
                return f"Interior node '{node.name}' must have at least 2 children."
            if kids and node.probability is not None:
                return f"Interior node '{node.name}' cannot carry a probability."
            if not kids:
                if node.probability is None:
                    return f"Terminal node '{node.name}' needs a probability."
                if not node.probability > 0:
                    return f"Probability of '{node.name}' must be positive."

        depths = {
            self._depth(node.name, self._parents) for node in self.nodes
            if not children.get(node.name)
        }
        if len(depths) != 1:
            return "All terminal nodes must sit at the same date."
        if depths == {0}:
            return "Market needs at least one trading date."

        total = sum(
            node.probability for node in self.nodes if not children.get(node.name)
        )
        if abs(total - 1.0) > PROBABILITY_TOL:
            return f"Probabilities sum to {total!r}, expected 1."

        return None

    @staticmethod
    def _children_of(nodes: Sequence[Node]) -> dict[str, tuple[str, ...]]:
        children: dict[str, list[str]] = {}
        for node in nodes:
            if node.parent is not None:
                children.setdefault(node.parent, []).append(node.name)
        return {name: tuple(kids) for name, kids in children.items()}

    @staticmethod
    def _walk(root: str, children: dict[str, tuple[str, ...]]) -> list[str]:
        order, stack = [], [root]
        while stack:
            name = stack.pop()
            order.append(name)
            stack.extend(reversed(children.get(name, ())))
        return order

    @staticmethod
    def _depth(name: str, parents: dict[str, str | None]) -> int:
        depth = 0
        while parents[name] is not None:
            name = parents[name]
            depth += 1
        return depth

    @cached_property
    def _parents(self) -> dict[str, str | None]:
        return {node.name: node.parent for node in self.nodes}

    @cached_property
    def by_name(self) -> dict[str, Node]:
        """Nodes indexed by name."""
        return {node.name: node for node in self.nodes}

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        """Children of every node, in declaration order (empty for leaves)."""
        children = self._children_of(self.nodes)
        return {node.name: children.get(node.name, ()) for node in self.nodes}

    @cached_property
    def root(self) -> str:
        """Name of the root node."""
        return next(node.name for node in self.nodes if node.parent is None)

    @cached_property
    def states(self) -> tuple[str, ...]:
        """Terminal node names, in declaration order."""
        return tuple(node.name for node in self.nodes if not self.children[node.name])

    @cached_property
    def probabilities(self) -> np.ndarray:
        """Reference probabilities of the states."""
        values = np.array([self.by_name[state].probability for state in self.states])
        values.setflags(write=False)
        return values

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_assets(self) -> int:
        return len(self.nodes[0].prices)

    @cached_property
    def horizon(self) -> int:
        """Number of trading dates N."""
        return self._depth(self.states[0], self._parents)

    @cached_property
    def paths(self) -> dict[str, tuple[str, ...]]:
        """Root-to-leaf node sequence of every state."""
        paths = {}
        for state in self.states:
            path = [state]
            while self._parents[path[-1]] is not None:
                path.append(self._parents[path[-1]])
            paths[state] = tuple(reversed(path))
        return paths

    def depth(self, name: str) -> int:
        """Date of a node."""
        return self._depth(name, self._parents)

    def subtree_mask(self, name: str) -> np.ndarray:
        """Boolean mask of the states reachable from a node."""
        depth = self.depth(name)
        return np.array([self.paths[state][depth] == name for state in self.states])

    def terminal_prices(self) -> np.ndarray:
        """Asset prices at the horizon, one row per state."""
        return np.array([self.by_name[state].prices for state in self.states])

    def to_frame(self) -> pd.DataFrame:
        """One row per node with parent, date, prices and probability."""
        columns = ["Node", "Parent", "Date"] + [
            f"S{asset}" for asset in range(self.n_assets)
        ] + ["Probability"]
        return pd.DataFrame(
            [
                [node.name, node.parent, self.depth(node.name), *node.prices,
                 node.probability]
                for node in self.nodes
            ],
            columns=columns,
        )


def build_tree(nodes: Sequence[Node], name: str = "market") -> ScenarioMarket:
    """
    Build a market from a node list.

    :param nodes: Nodes with parent links; terminal nodes carry probabilities.
    :param name: Label of the market.
    :return: The validated market.
    """
    market = ScenarioMarket(
        nodes=tuple(
            Node(
                name=str(node.name),
                prices=tuple(float(price) for price in node.prices),
                parent=node.parent,
                probability=None if node.probability is None else float(node.probability),
            )
            for node in nodes
        ),
        name=name,
    )
    if (err := market.validate()) is not None:
        raise MarketSpecError(err)
    return market


def build_one_period(
    prices_now: Sequence[float] | np.ndarray,
    prices_next: Sequence | np.ndarray,
    probs: Sequence[float] | np.ndarray,
    name: str = "one-period",
) -> ScenarioMarket:
    """
    Build a one-period market with a root and one child per state.

    :param prices_now: Price vector at date 0 (length d).
    :param prices_next: Prices at date 1, shape (n,) for d = 1 or (n, d).
    :param probs: Reference probabilities of the n states.
    :param name: Label of the market.
    :return: The validated market.
    """
    now = np.atleast_1d(np.asarray(prices_now, dtype=float))
    probs = np.asarray(probs, dtype=float)
    following = np.asarray(prices_next, dtype=float)
    if following.ndim == 1:
        following = following[:, None]

    if probs.ndim != 1 or following.shape[0] != probs.size:
        raise MarketSpecError(
            f"Got {following.shape[0]} next-state price rows for "
            f"{probs.size} probabilities.",
            field="probs",
        )
    if following.shape[1] != now.size:
        raise MarketSpecError(
            f"Next-state prices have {following.shape[1]} assets, "
            f"current prices have {now.size}.",
            field="prices_next",
        )
    if probs.size < 2:
        raise MarketSpecError("A one-period market needs at least 2 next states.")
    if np.any(probs <= 0):
        raise MarketSpecError("Probabilities must be positive.", field="probs")
    if abs(probs.sum() - 1.0) > PROBABILITY_TOL:
        raise MarketSpecError(
            f"Probabilities sum to {probs.sum()!r}, expected 1.", field="probs"
        )

    nodes = [Node("root", tuple(now))] + [
        Node(f"w{i + 1}", tuple(row), parent="root", probability=p)
        for i, (row, p) in enumerate(zip(following, probs))
    ]
    return build_tree(nodes, name=name)


@dataclass(frozen=True)
class GainDescriptor:
    """Trade generating one gain column: hold `holding` units from `node` to the next date."""

    node: str
    asset: int
    holding: float = 1.0


@dataclass(frozen=True, eq=False)
class GainBasis:
    """Terminal values of simple trading gains, one column per descriptor."""

    matrix: np.ndarray
    descriptors: tuple[GainDescriptor, ...]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def rank(self, rtol: float = RANK_RTOL) -> int:
        return numerical_rank(self.matrix, rtol)

    def with_columns(
        self, extra: np.ndarray, descriptors: Sequence[GainDescriptor]
    ) -> GainBasis:
        """Basis enlarged by extra gain columns."""
        extra = np.asarray(extra, dtype=float).reshape(self.matrix.shape[0], -1)
        return GainBasis(
            matrix=np.hstack([self.matrix, extra]),
            descriptors=self.descriptors + tuple(descriptors),
        )

    def scaled(self, factor: float) -> GainBasis:
        """Basis with every holding multiplied by a constant."""
        return GainBasis(
            matrix=self.matrix * factor,
            descriptors=tuple(
                GainDescriptor(d.node, d.asset, d.holding * factor)
                for d in self.descriptors
            ),
        )


def gain_basis(market: ScenarioMarket) -> GainBasis:
    """
    Enumerate one-step gains: buy one unit of an asset at an interior node, sell at the next date.

    Their span equals the span of every simple stopped gain on the tree.

    :param market: The market.
    :return: The gain basis on the terminal states.
    """
    columns, descriptors = [], []
    for node in market.nodes:
        if not market.children[node.name]:
            continue
        depth = market.depth(node.name)
        for asset in range(market.n_assets):
            column = np.zeros(market.n_states)
            for i, state in enumerate(market.states):
                path = market.paths[state]
                if path[depth] == node.name:
                    following = market.by_name[path[depth + 1]]
                    column[i] = following.prices[asset] - node.prices[asset]
            columns.append(column)
            descriptors.append(GainDescriptor(node.name, asset))

    matrix = np.column_stack(columns) if columns else np.zeros((market.n_states, 0))
    return GainBasis(matrix=matrix, descriptors=tuple(descriptors))


@dataclass(frozen=True, eq=False)
class DensityVector:
    """Candidate density dQ/dP on the states."""

    values: np.ndarray
    reference: np.ndarray

    def validate(self, tol: float = PROBABILITY_TOL) -> str | None:
        """Check that the density integrates to one."""
        if self.values.shape != self.reference.shape:
            return "Density and reference probabilities differ in length."
        if abs(self.total() - 1.0) > tol:
            return f"Density integrates to {self.total()!r}, expected 1."
        return None

    def total(self) -> float:
        return float(self.reference @ self.values)

    def expectation(self, payoff: np.ndarray) -> float:
        """Expectation of a payoff under the (signed) measure."""
        return float(self.reference @ (self.values * payoff))

    def norm(self, q: float) -> float:
        """L^q(P) norm of the density."""
        return float((self.reference @ np.abs(self.values) ** q) ** (1.0 / q))


@dataclass(frozen=True, eq=False)
class MartingaleAffineSet:
    """Signed martingale measures {u0 + V z}: V has orthonormal columns, u0 is orthogonal to them."""

    u0: np.ndarray
    directions: np.ndarray
    constraints: np.ndarray
    reference: np.ndarray

    @property
    def dimension(self) -> int:
        return self.directions.shape[1]

    @property
    def rank(self) -> int:
        return self.u0.size - self.dimension

    def point(self, z: np.ndarray | Sequence[float]) -> DensityVector:
        """Density at parameter z."""
        z = np.asarray(z, dtype=float).reshape(self.dimension)
        return DensityVector(self.u0 + self.directions @ z, self.reference)

    def residual(self, values: np.ndarray) -> float:
        """Largest violation of E[u] = 1 and E[u h_j] = 0."""
        target = np.zeros(self.constraints.shape[0])
        target[0] = 1.0
        return float(np.max(np.abs(self.constraints @ values - target)))


def _constraint_matrix(market: ScenarioMarket, basis: GainBasis) -> np.ndarray:
    probabilities = np.asarray(market.probabilities)
    return np.vstack([probabilities, (probabilities[:, None] * basis.matrix).T])


def martingale_affine_set(
    market: ScenarioMarket, basis: GainBasis, rtol: float = RANK_RTOL
) -> MartingaleAffineSet:
    """
    Parametrize the signed martingale measures of a market.

    :param market: The market.
    :param basis: Its gain basis.
    :param rtol: Relative rank cutoff.
    :return: The affine set {u0 + V z}.
    :raises InfeasibleMarketError: If 1 lies in span K_0.
    """
    constraints = _constraint_matrix(market, basis)
    target = np.zeros(constraints.shape[0])
    target[0] = 1.0

    u0 = min_norm_solve(constraints, target, rtol)
    residual = float(np.max(np.abs(constraints @ u0 - target)))
    if residual > CONSISTENCY_TOL:
        logger.warning(
            "Market %s has no signed martingale measure (residual %.3e)",
            market.name,
            residual,
        )
        raise InfeasibleMarketError(
            "no signed martingale measure: 1 ∈ span K_0", distance=residual
        )

    _, directions = range_and_null_space(constraints, rtol)
    logger.debug(
        "Martingale affine set of %s has dimension %d", market.name, directions.shape[1]
    )
    return MartingaleAffineSet(
        u0=u0,
        directions=directions,
        constraints=constraints,
        reference=np.asarray(market.probabilities),
    )


@dataclass(frozen=True, eq=False)
class DualAffineSet:
    """The coset 1 + span K_0 as {g0 + W y}: W is orthonormal in L2(P) and g0 is L2(P)-orthogonal to it."""

    g0: np.ndarray
    directions: np.ndarray
    reference: np.ndarray

    @property
    def dimension(self) -> int:
        return self.directions.shape[1]

    def point(self, y: np.ndarray | Sequence[float]) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(self.dimension)
        return self.g0 + self.directions @ y

    def coordinates(self, values: np.ndarray) -> np.ndarray:
        """Coordinates y of the L2(P)-nearest point of the coset."""
        return self.directions.T @ (self.reference * (np.asarray(values) - self.g0))


def dual_affine_set(
    market: ScenarioMarket, basis: GainBasis, rtol: float = RANK_RTOL
) -> DualAffineSet:
    """
    Parametrize the elements 1 - h, h in span K_0, around their L2(P)-smallest member.

    :param market: The market.
    :param basis: Its gain basis.
    :param rtol: Relative rank cutoff.
    :return: The coset {g0 + W y}.
    """
    reference = np.asarray(market.probabilities)
    root = np.sqrt(reference)
    if basis.n_columns == 0:
        span = np.zeros((market.n_states, 0))
    else:
        span, _ = range_and_null_space((root[:, None] * basis.matrix).T, rtol)
    directions = span / root[:, None]
    g0 = 1.0 - directions @ (span.T @ root)
    return DualAffineSet(g0=g0, directions=directions, reference=reference)


@dataclass(frozen=True)
class FeasibilityReport:
    """Distance of the constant 1 from span K_0 in L2(P)."""

    distance: float
    tolerance: float

    @property
    def feasible(self) -> bool:
        return self.distance > self.tolerance


def check_feasibility(
    market: ScenarioMarket, basis: GainBasis, rtol: float = RANK_RTOL
) -> FeasibilityReport:
    """
    Decide whether signed martingale measures exist.

    They exist iff the constant 1 is not a terminal gain.

    :param market: The market.
    :param basis: Its gain basis.
    :param rtol: Relative rank cutoff, also used as the distance threshold.
    :return: The feasibility report.
    """
    distance, _ = weighted_distance_to_span(
        np.ones(market.n_states), basis.matrix, market.probabilities, rtol
    )
    return FeasibilityReport(distance=distance, tolerance=rtol)


@dataclass(frozen=True)
class DensityProcess:
    """Conditional expectations E_P[u | node] and Q-transition probabilities on the tree."""

    values: dict[str, float]
    transitions: dict[tuple[str, str], float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"Parent": parent, "Child": child, "Q Transition": probability}
                for (parent, child), probability in self.transitions.items()
            ],
            columns=["Parent", "Child", "Q Transition"],
        )


def density_process(market: ScenarioMarket, density: DensityVector) -> DensityProcess:
    """
    Radon-Nikodym process of a density on the tree.

    :param market: The market.
    :param density: Density of the measure against the market probabilities.
    :return: Node values and edge transition probabilities under the measure.
    """
    probabilities = np.asarray(market.probabilities)
    weight, values = {}, {}
    for node in market.nodes:
        mask = market.subtree_mask(node.name)
        weight[node.name] = float(probabilities[mask].sum())
        values[node.name] = float(probabilities[mask] @ density.values[mask]) / weight[
            node.name
        ]

    transitions = {}
    for node in market.nodes:
        for child in market.children[node.name]:
            mass = values[node.name] * weight[node.name]
            transitions[(node.name, child)] = (
                values[child] * weight[child] / mass if mass != 0.0 else float("nan")
            )
    return DensityProcess(values=values, transitions=transitions)
