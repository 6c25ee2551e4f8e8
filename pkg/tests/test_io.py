import json
import math

import numpy as np
import pytest

from qoptimal.core.checks import CheckReport, Residual
from qoptimal.core.errors import MarketSpecError
from qoptimal.core.market import gain_basis
from qoptimal.diffusion.coefficients import Constant, Table
from qoptimal.io.formats import (
    dump_candidate,
    dump_market,
    load_diffusion,
    load_market,
    parse_candidate,
    parse_diffusion,
    parse_market,
)
from qoptimal.io.report import RunReport

from .markets import DATA, random_market

ONE_PERIOD = """version = 1
name = "pair"

[[node]]
name = "root"
prices = [1.0]

[[node]]
name = "a"
parent = "root"
prices = [2.0]
probability = 0.5

[[node]]
name = "b"
parent = "root"
prices = [0.5]
probability = 0.5
"""


def test_load_trinomial():
    market = load_market(DATA / "trinomial.toml")
    assert market.name == "trinomial"
    assert market.states == ("up", "mid", "down")
    assert market.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    assert gain_basis(market).n_columns == 1


def test_name_defaults_to_source_stem():
    market = parse_market(ONE_PERIOD.replace('name = "pair"\n', ""), source="dir/binary.toml")
    assert market.name == "binary"


@pytest.mark.parametrize("seed", (5, 12, 20))
def test_market_dump_reads_back_identically(seed):
    shapes = {5: (5, 2, 2, 1), 12: (12, 3, 3, 2), 20: (20, 3, 4, 1)}
    market = random_market(*shapes[seed])
    again = parse_market(dump_market(market))
    assert again.nodes == market.nodes
    assert again.name == market.name
    np.testing.assert_array_equal(gain_basis(again).matrix, gain_basis(market).matrix)


def test_missing_and_unsupported_version():
    with pytest.raises(MarketSpecError) as info:
        parse_market(ONE_PERIOD.replace("version = 1\n", ""))
    assert info.value.field == "version"
    with pytest.raises(MarketSpecError) as info:
        parse_market(ONE_PERIOD.replace("version = 1", "version = 2"))
    assert info.value.line == 1
    assert "[line 1, field 'version']" in str(info.value)


def test_syntax_error_reports_line():
    broken = ONE_PERIOD.replace('name = "a"', "name = ")
    with pytest.raises(MarketSpecError) as info:
        parse_market(broken)
    assert info.value.line == 9


def test_node_errors_point_at_their_table():
    with pytest.raises(MarketSpecError) as info:
        parse_market(ONE_PERIOD.replace("prices = [2.0]\n", ""))
    assert info.value.line == 8
    assert info.value.field == "prices"

    with pytest.raises(MarketSpecError) as info:
        parse_market(ONE_PERIOD.replace("probability = 0.5\n\n[[node]]", "probability = -0.5\n\n[[node]]"))
    assert info.value.line == 8

    with pytest.raises(MarketSpecError) as info:
        parse_market(ONE_PERIOD.replace("prices = [0.5]", 'prices = ["x"]'))
    assert info.value.line == 14


def test_candidate_round_trip():
    market = parse_market(ONE_PERIOD)
    g_star = np.array([0.1 + 1e-16 * 3, 1.0 / 3.0])
    candidate = parse_candidate(dump_candidate(market.states, g_star, 2.5), market)
    np.testing.assert_array_equal(candidate.g_star, g_star)
    assert candidate.q == 2.5


def test_candidate_errors():
    market = parse_market(ONE_PERIOD)
    text = dump_candidate(market.states, np.array([0.5, 1.5]), 2.0)
    with pytest.raises(MarketSpecError, match="command line"):
        parse_candidate(text, market, q=3.0)
    assert parse_candidate(text, market, q=2.0).q == 2.0

    with pytest.raises(MarketSpecError, match="unknown state") as info:
        parse_candidate(text + '"c" = 1.0\n', market)
    assert info.value.line == 7
    with pytest.raises(MarketSpecError, match="no value"):
        parse_candidate(text.replace('"b" = 1.5\n', ""), market)
    with pytest.raises(MarketSpecError, match="missing q"):
        parse_candidate(text.replace("q = 2\n", ""), market)


def test_load_diffusion_presets():
    spec, extras = load_diffusion(DATA / "stochastic_volatility.toml")
    assert spec.name == "stochastic-lambda"
    assert isinstance(spec.mu_fn, Table)
    assert spec.mu_fn.proportional_to_s
    assert isinstance(spec.rho_fn, Constant) and spec.rho_fn.value == 0.0
    assert extras == {}

    spec, extras = load_diffusion(DATA / "constant_lambda.toml")
    assert spec.s0 == 0.0 and spec.y0 == 0.0
    assert extras == {"paths": 100000, "steps": 200}
    assert isinstance(spec.beta_fn, Constant) and spec.beta_fn.value == 0.0


DIFFUSION = """version = 1
q = 2.0
T = 1.0

[mu]
preset = "constant"
value = 0.2

[sigma]
preset = "constant"
value = 1.0
"""


def test_diffusion_candidate_tables():
    spec, extras = parse_diffusion(
        DIFFUSION + '\n[eta]\npreset = "linear"\nintercept = 0.1\nslope = 0.0\n'
    )
    assert spec.name == "<diffusion>"
    assert extras["eta"](np.ones(2), np.zeros(2), 0.0).tolist() == [0.1, 0.1]


def test_diffusion_errors():
    with pytest.raises(MarketSpecError, match="missing"):
        parse_diffusion(DIFFUSION.replace("T = 1.0\n", ""))
    with pytest.raises(MarketSpecError) as info:
        parse_diffusion(DIFFUSION.replace('preset = "constant"\nvalue = 0.2', 'preset = "cubic"'))
    assert info.value.field == "mu.preset"
    assert info.value.line == 5
    with pytest.raises(MarketSpecError) as info:
        parse_diffusion(DIFFUSION + 'proportional_to = "y"\n')
    assert info.value.field == "sigma.proportional_to"
    with pytest.raises(MarketSpecError):
        parse_diffusion(
            DIFFUSION.replace(
                'preset = "constant"\nvalue = 0.2', 'preset = "table"\nknots = [1.0, 0.0]\nvalues = [0.1, 0.2]'
            )
        )
    with pytest.raises(MarketSpecError, match="integer"):
        parse_diffusion(DIFFUSION + "\n[simulation]\npaths = 1e5\n")
    with pytest.raises(MarketSpecError, match="exceed 1"):
        parse_diffusion(DIFFUSION.replace("q = 2.0", "q = 1.0"))


def test_report_lines_and_determinism(tmp_path):
    path = tmp_path / "market.toml"
    path.write_text(ONE_PERIOD, encoding="utf-8")

    def build(wall_clock):
        report = RunReport(command="solve", seed=42, wall_clock=wall_clock)
        report.add_input(path)
        report.add("q", 2.0)
        report.add_check("identity", CheckReport((Residual("gap", 1e-12, 1e-8),)))
        report.require("verdict", True)
        return report

    first, second = build(0.5), build(1.5)
    assert first.render(include_wall_clock=False) == second.render(include_wall_clock=False)
    assert first.render() != second.render()

    lines = first.lines()
    assert lines[0] == "command = solve"
    assert lines[1] == "seed = 42"
    assert lines[2].startswith(f"input.{path}.sha256 = ")
    assert lines[3] == "q = 2"
    assert lines[4] == "identity.gap = 9.9999999999999998e-13  tol=1e-08  PASS"
    assert lines[-2] == "result = PASS"
    assert lines[-1] == "wall_clock_s = 0.500"


def test_relative_residual_reports_its_scale(tmp_path):
    residual = Residual.relative("gap", -0.5, 4.0, 1.0)
    assert residual.value == 0.125
    assert residual.scale == 4.0
    assert Residual.relative("gap", 0.5, 0.0, 1.0).scale == 1.0

    report = RunReport(command="solve")
    report.add_check("identity", CheckReport((residual, Residual("plain", 0.25, 1.0))))
    lines = report.lines()
    assert lines[1] == "identity.gap = 0.125  tol=1  scale=4  PASS"
    assert lines[2] == "identity.plain = 0.25  tol=1  PASS"

    target = tmp_path / "report.json"
    report.dump_json(target)
    entries = json.loads(target.read_text(encoding="utf-8"))["entries"]
    assert entries[0]["scale"] == 4.0
    assert "scale" not in entries[1]


def test_failed_entry_fails_the_report(tmp_path):
    report = RunReport(command="verify")
    report.add("verify.membership_residual", math.nan, 1e-8, False)
    assert not report.passed
    assert "FAIL" in report.render()

    target = tmp_path / "report.json"
    report.dump_json(target)
    dumped = json.loads(target.read_text(encoding="utf-8"))
    assert dumped["passed"] is False
    assert dumped["entries"][0]["value"] == "nan"
