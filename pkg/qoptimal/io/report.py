"""Line-oriented run reports with input digests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..core.checks import CheckReport, Residual
from .formats import format_float


def file_digest(path: str | Path) -> str:
    """SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


@dataclass(frozen=True)
class ReportEntry:
    """One reported value; judged entries carry their tolerance and outcome."""

    key: str
    value: Any
    tolerance: float | None = None
    passed: bool | None = None
    # Value the reported number was divided by, when it is relative.
    scale: float | None = None

    def line(self) -> str:
        text = f"{self.key} = {_render(self.value)}"
        if self.tolerance is not None:
            text += f"  tol={format_float(self.tolerance)}"
        if self.scale is not None:
            text += f"  scale={format_float(self.scale)}"
        if self.passed is not None:
            text += "  PASS" if self.passed else "  FAIL"
        return text

    def as_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {"key": self.key, "value": self.value}
        if self.tolerance is not None:
            record["tolerance"] = self.tolerance
        if self.scale is not None:
            record["scale"] = self.scale
        if self.passed is not None:
            record["passed"] = self.passed
        return record


@dataclass
class RunReport:
    """Result of one command, in insertion order."""

    command: str
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    entries: list[ReportEntry] = field(default_factory=list)
    wall_clock: float | None = None

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add(
        self,
        key: str,
        value: Any,
        tolerance: float | None = None,
        passed: bool | None = None,
        scale: float | None = None,
    ) -> None:
        self.entries.append(ReportEntry(key, value, tolerance, passed, scale))

    def add_residual(self, prefix: str, residual: Residual) -> None:
        self.add(
            f"{prefix}.{residual.name}",
            residual.value,
            residual.tolerance,
            residual.passed,
            None if residual.scale == 1.0 else residual.scale,
        )

    def add_check(self, prefix: str, report: CheckReport) -> None:
        for residual in report:
            self.add_residual(prefix, residual)

    def require(self, key: str, passed: bool) -> None:
        """Record a judged outcome without a numeric value."""
        self.add(key, passed, passed=passed)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries if entry.passed is not None)

    def lines(self, include_wall_clock: bool = True) -> list[str]:
        """Report lines in a stable order; the wall clock comes last."""
        lines = [f"command = {self.command}"]
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        lines += [f"input.{name}.sha256 = {digest}" for name, digest in self.inputs.items()]
        lines += [entry.line() for entry in self.entries]
        lines.append(f"result = {'PASS' if self.passed else 'FAIL'}")
        if include_wall_clock and self.wall_clock is not None:
            lines.append(f"wall_clock_s = {self.wall_clock:.3f}")
        return lines

    def render(self, include_wall_clock: bool = True) -> str:
        return "\n".join(self.lines(include_wall_clock)) + "\n"

    def as_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "inputs": self.inputs,
            "entries": [entry.as_dict() for entry in self.entries],
            "passed": self.passed,
            "wall_clock": self.wall_clock,
        }

    def dump_json(self, path: str | Path) -> None:
        """Structured dump of the report; non-finite floats are written as strings."""

        def encode(value: Any) -> Any:
            if isinstance(value, float) and not (value == value and abs(value) != float("inf")):
                return repr(value)
            if isinstance(value, dict):
                return {k: encode(v) for k, v in value.items()}
            if isinstance(value, list):
                return [encode(v) for v in value]
            return value

        Path(path).write_text(
            json.dumps(encode(self.as_dict()), indent=2, sort_keys=False) + "\n",
            encoding="utf-8",
        )
