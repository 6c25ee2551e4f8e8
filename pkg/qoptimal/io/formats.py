"""TOML formats of market, candidate and diffusion-spec files."""

from __future__ import annotations

import json
import logging
import re
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..core.errors import MarketSpecError
from ..core.market import Node, ScenarioMarket, build_tree
from ..diffusion.coefficients import Coefficient, Constant, Linear, Table
from ..diffusion.simulation import DiffusionSpec
from ..verifier import CandidateMeasure

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
COEFFICIENTS = ("mu", "sigma", "alpha", "beta", "rho")
OPTIONAL_COEFFICIENTS = ("alpha", "beta", "rho")


def format_float(value: float) -> str:
    """17 significant digits, enough to read back the same double."""
    return f"{float(value):.17g}"


def _header_lines(text: str, header: str) -> list[int]:
    """1-based line numbers of every occurrence of a table header."""
    pattern = re.compile(rf"^\s*{re.escape(header)}\s*(#.*)?$")
    return [i for i, line in enumerate(text.splitlines(), start=1) if pattern.match(line)]


def _key_line(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return i
    return None


def _parse(text: str, source: str) -> dict[str, Any]:
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise MarketSpecError(
            f"{source}: {exc}", line=int(match.group(1)) if match else None
        ) from exc
    version = document.get("version")
    if version is None:
        raise MarketSpecError(f"{source}: missing version", field="version")
    if version != FORMAT_VERSION:
        raise MarketSpecError(
            f"{source}: unsupported version {version!r}",
            line=_key_line(text, "version"),
            field="version",
        )
    return document


def _number(value: Any, *, line: int | None, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MarketSpecError(f"expected a number, got {value!r}", line=line, field=field)
    return float(value)


def parse_market(text: str, source: str = "<market>") -> ScenarioMarket:
    """
    Parse a market file.

    The file holds `version = 1`, an optional `name` and one `[[node]]` table per node
    with `name`, `prices`, and `parent` (all but the root) and `probability` (terminal
    nodes only).

    :param text: File content.
    :param source: Label used in diagnostics.
    :return: The validated market.
    :raises MarketSpecError: With line and field of the first problem found.
    """
    document = _parse(text, source)
    tables = document.get("node")
    if not isinstance(tables, list) or not tables:
        raise MarketSpecError(f"{source}: no [[node]] tables", field="node")
    header_lines = _header_lines(text, "[[node]]")

    nodes = []
    for i, table in enumerate(tables):
        line = header_lines[i] if i < len(header_lines) else None
        for required in ("name", "prices"):
            if required not in table:
                raise MarketSpecError(
                    f"{source}: node {i + 1} lacks {required}", line=line, field=required
                )
        prices = table["prices"]
        if isinstance(prices, (int, float)) and not isinstance(prices, bool):
            prices = [prices]
        if not isinstance(prices, list):
            raise MarketSpecError(
                f"{source}: prices must be a list", line=line, field="prices"
            )
        probability = table.get("probability")
        nodes.append(
            Node(
                name=str(table["name"]),
                prices=tuple(_number(v, line=line, field="prices") for v in prices),
                parent=table.get("parent"),
                probability=None
                if probability is None
                else _number(probability, line=line, field="probability"),
            )
        )

    try:
        return build_tree(nodes, name=str(document.get("name", Path(source).stem)))
    except MarketSpecError as exc:
        offending = next(
            (node for node in nodes if f"'{node.name}'" in str(exc)), None
        )
        line = (
            header_lines[nodes.index(offending)]
            if offending is not None and nodes.index(offending) < len(header_lines)
            else None
        )
        raise MarketSpecError(f"{source}: {exc}", line=line) from exc


def load_market(path: str | Path) -> ScenarioMarket:
    path = Path(path)
    return parse_market(path.read_text(encoding="utf-8"), source=str(path))


def dump_market(market: ScenarioMarket) -> str:
    """Market file content; parse_market reads back the same market bit for bit."""
    lines = [f"version = {FORMAT_VERSION}", f"name = {json.dumps(market.name)}"]
    for node in market.nodes:
        lines += ["", "[[node]]", f"name = {json.dumps(node.name)}"]
        if node.parent is not None:
            lines.append(f"parent = {json.dumps(node.parent)}")
        lines.append(f"prices = [{', '.join(format_float(v) for v in node.prices)}]")
        if node.probability is not None:
            lines.append(f"probability = {format_float(node.probability)}")
    return "\n".join(lines) + "\n"


def parse_candidate(
    text: str,
    market: ScenarioMarket,
    source: str = "<candidate>",
    q: float | None = None,
) -> CandidateMeasure:
    """
    Parse a candidate file: `version`, `q` and a `[g_star]` table keyed by state name.

    :param q: Exponent claimed on the command line; must match the file when both are given.
    :raises MarketSpecError: If a state is missing or unknown, or q is missing or contradicted.
    """
    document = _parse(text, source)
    if "q" in document:
        claimed = _number(document["q"], line=_key_line(text, "q"), field="q")
        if q is not None and q != claimed:
            raise MarketSpecError(
                f"{source}: file claims q={claimed!r}, command line q={q!r}",
                line=_key_line(text, "q"),
                field="q",
            )
        q = claimed
    if q is None:
        raise MarketSpecError(f"{source}: missing q", field="q")
    table = document.get("g_star")
    header = _header_lines(text, "[g_star]")
    if not isinstance(table, dict):
        raise MarketSpecError(f"{source}: missing [g_star] table", field="g_star")
    unknown = sorted(set(table) - set(market.states))
    if unknown:
        raise MarketSpecError(
            f"{source}: unknown state {unknown[0]!r}",
            line=_key_line(text, unknown[0]),
            field="g_star",
        )
    missing = [state for state in market.states if state not in table]
    if missing:
        raise MarketSpecError(
            f"{source}: no value for state {missing[0]!r}",
            line=header[0] if header else None,
            field="g_star",
        )
    values = np.array(
        [
            _number(table[state], line=_key_line(text, state), field=state)
            for state in market.states
        ]
    )
    return CandidateMeasure(g_star=values, q=q)


def load_candidate(
    path: str | Path, market: ScenarioMarket, q: float | None = None
) -> CandidateMeasure:
    path = Path(path)
    return parse_candidate(path.read_text(encoding="utf-8"), market, str(path), q)


def dump_candidate(states: Sequence[str], g_star: np.ndarray, q: float) -> str:
    """Candidate file content with 17 significant digits."""
    lines = [f"version = {FORMAT_VERSION}", f"q = {format_float(q)}", "", "[g_star]"]
    lines += [f"{json.dumps(state)} = {format_float(v)}" for state, v in zip(states, g_star)]
    return "\n".join(lines) + "\n"


def _coefficient(
    table: Any, key: str, text: str, source: str
) -> Coefficient:
    line = next(iter(_header_lines(text, f"[{key}]")), None)
    if not isinstance(table, dict):
        raise MarketSpecError(f"{source}: [{key}] must be a table", line=line, field=key)
    preset = table.get("preset", "constant")
    variable = table.get("variable", "t")
    proportional = table.get("proportional_to")
    if proportional not in (None, "s"):
        raise MarketSpecError(
            f"{source}: proportional_to must be \"s\"", line=line, field=f"{key}.proportional_to"
        )
    scaled = proportional == "s"
    try:
        if preset == "constant":
            return Constant(_number(table.get("value"), line=line, field=f"{key}.value"), scaled)
        if preset == "linear":
            return Linear(
                _number(table.get("intercept", 0.0), line=line, field=f"{key}.intercept"),
                _number(table.get("slope", 0.0), line=line, field=f"{key}.slope"),
                variable,
                scaled,
            )
        if preset == "table":
            return Table(table.get("knots", []), table.get("values", []), variable, scaled)
    except MarketSpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise MarketSpecError(f"{source}: {exc}", line=line, field=key) from exc
    raise MarketSpecError(
        f"{source}: unknown preset {preset!r}", line=line, field=f"{key}.preset"
    )


def parse_diffusion(text: str, source: str = "<diffusion>") -> tuple[DiffusionSpec, dict[str, Any]]:
    """
    Parse a diffusion-spec file.

    Scalars `version`, `q`, `T`, `s0`, `y0`, optional `name`; coefficient tables
    `[mu]`, `[sigma]` and optionally `[alpha]`, `[beta]`, `[rho]`, `[eta]`, `[xi]`;
    optional `[simulation]` defaults (`paths`, `steps`, `seed`).

    :return: The spec and the extra settings (candidate coefficients, simulation defaults).
    """
    document = _parse(text, source)
    scalars = {}
    for key, default in (("q", None), ("T", None), ("s0", 0.0), ("y0", 0.0)):
        if key not in document and default is None:
            raise MarketSpecError(f"{source}: missing {key}", field=key)
        scalars[key] = _number(document.get(key, default), line=_key_line(text, key), field=key)

    coefficients = {}
    for key in COEFFICIENTS:
        if key not in document:
            if key not in OPTIONAL_COEFFICIENTS:
                raise MarketSpecError(f"{source}: missing [{key}]", field=key)
            coefficients[key] = Constant(0.0)
            continue
        coefficients[key] = _coefficient(document[key], key, text, source)

    spec = DiffusionSpec(
        mu_fn=coefficients["mu"],
        sigma_fn=coefficients["sigma"],
        alpha_fn=coefficients["alpha"],
        beta_fn=coefficients["beta"],
        rho_fn=coefficients["rho"],
        s0=scalars["s0"],
        y0=scalars["y0"],
        T=scalars["T"],
        q=scalars["q"],
        name=str(document.get("name", Path(source).stem)),
    )
    if (err := spec.validate()) is not None:
        raise MarketSpecError(f"{source}: {err}")

    extras: dict[str, Any] = {
        key: _coefficient(document[key], key, text, source)
        for key in ("eta", "xi")
        if key in document
    }
    simulation = document.get("simulation", {})
    for key in ("paths", "steps", "seed"):
        if key in simulation:
            value = simulation[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise MarketSpecError(
                    f"{source}: {key} must be an integer",
                    line=_key_line(text, key),
                    field=f"simulation.{key}",
                )
            extras[key] = value
    return spec, extras


def load_diffusion(path: str | Path) -> tuple[DiffusionSpec, dict[str, Any]]:
    path = Path(path)
    return parse_diffusion(path.read_text(encoding="utf-8"), source=str(path))
