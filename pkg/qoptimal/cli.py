"""Command-line entry point: solve, verify, sweep, simulate and oracle."""

from __future__ import annotations

import argparse
import logging
import math
import shlex
import sys
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core.errors import (
    ConvergenceError,
    DegenerateCandidateError,
    InfeasibleMarketError,
    MarketSpecError,
    SimulationError,
)
from .core.market import gain_basis, martingale_affine_set
from .diffusion.coefficients import Constant
from .diffusion.constants import (
    ch_monte_carlo,
    ch_volatility_only,
    density_moment_check,
    fundamental_eq_residual,
    pathwise_identity_check,
    volatility_representation_check,
)
from .diffusion.simulation import DEFAULT_SEED
from .io.formats import dump_candidate, load_candidate, load_diffusion, load_market
from .io.report import RunReport
from .measure import (
    IDENTITY_TOL,
    assemble,
    call_payoff,
    g_power_identity,
    mu_consistency,
    price,
    structural_identities,
)
from .projection import SolverOptions, dual_project, duality_certificate, primal_minimize
from .verifier import (
    CandidateMeasure,
    GridOptions,
    Verdict,
    VerificationReport,
    VerifyOptions,
    brute_force_oracle,
    verify,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NONCONVERGENCE = 3
EXIT_VERIFICATION = 4

DUALITY_TOL = 1e-8
ORACLE_TOL = 1e-6
PATHWISE_TOL = 1e-10
DEFAULT_PATHS = 20_000
DEFAULT_STEPS = 200
N_STD = 3.0


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with EXIT_USAGE."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunOptions:
    """Options shared by the commands."""

    solver: SolverOptions = SolverOptions()
    verify: VerifyOptions = VerifyOptions()
    seed: int | None = None
    paths: int | None = None
    steps: int | None = None


def _add_verification(report: RunReport, result: VerificationReport) -> None:
    report.add("verify.martingale_residual", result.martingale_residual)
    report.add(
        "verify.membership_residual",
        result.membership_residual,
        result.optimal_tol,
        result.subspace_verdict is Verdict.OPTIMAL,
    )
    report.add(
        "verify.normalization_residual",
        result.normalization_residual,
        result.optimal_tol,
        result.normalization_residual < result.optimal_tol,
    )
    report.add(
        "verify.sampled_max_residual",
        result.sampled_max_residual,
        result.optimal_tol,
        result.sampling_verdict is Verdict.OPTIMAL,
    )
    report.add("verify.n_samples", result.n_samples)
    report.add("verify.reason", result.reason)
    report.require(f"verify.verdict.{result.verdict.value}", result.verdict is Verdict.OPTIMAL)


def cmd_solve(
    market_file: str | Path,
    q: float,
    opts: RunOptions | None = None,
    *,
    call: tuple[float, int] | None = None,
    csv_file: str | Path | None = None,
    candidate_file: str | Path | None = None,
) -> RunReport:
    """
    Solve for the q-optimal measure and certify it.

    Runs the gain basis, dual projection, primal minimisation, duality certificate,
    assembly, identity checks and verification.

    :param market_file: Market file.
    :param q: Exponent.
    :param opts: Run options.
    :param call: Optional (strike, asset) of a European call to price under Q*.
    :param csv_file: Optional per-state table destination.
    :param candidate_file: Optional destination of the computed candidate.
    :return: The report; it passes iff every certificate passes.
    """
    opts = opts or RunOptions()
    report = RunReport(command="solve", seed=opts.verify.seed)
    report.add_input(market_file)
    market = load_market(market_file)
    basis = gain_basis(market)
    report.add("market.name", market.name)
    report.add("market.n_states", market.n_states)
    report.add("market.n_assets", market.n_assets)
    report.add("market.horizon", market.horizon)
    report.add("basis.n_columns", basis.n_columns)
    report.add("basis.rank", basis.rank(opts.solver.rank_rtol))
    report.add("q", float(q))

    dual = dual_project(market, basis, q, opts.solver)
    primal = primal_minimize(market, basis, q, opts.solver)
    report.add("dual.p_norm", dual.p_norm)
    report.add("dual.solved_on", dual.solved_on.value)
    report.add("dual.iterations", dual.iterations)
    report.add(
        "dual.grad_norm",
        dual.grad_norm / dual.grad_scale,
        opts.solver.tol,
        dual.converged(opts.solver.tol),
        dual.grad_scale,
    )
    stationarity = dual.stationarity(basis)
    report.add("dual.stationarity", stationarity, IDENTITY_TOL, stationarity < IDENTITY_TOL)
    report.add("primal.solved_on", primal.solved_on.value)
    report.add("primal.q_norm", primal.q_norm)
    report.add("primal.affine_dimension", primal.z.size)
    report.add_check("certificate", duality_certificate(dual, primal, DUALITY_TOL))

    solution = assemble(dual, q)
    report.add("solution.mu", solution.mu)
    report.add("solution.q_norm", solution.q_norm)
    report.add("solution.classification", solution.classification.value)
    density_scale = max(1.0, float(np.max(np.abs(primal.u.values))))
    density_gap = float(np.max(np.abs(solution.density.values - primal.u.values))) / density_scale
    report.add(
        "solution.primal_density_gap",
        density_gap,
        ORACLE_TOL,
        density_gap < ORACLE_TOL,
        density_scale,
    )
    report.add_check("identity", mu_consistency(solution, q))
    report.add_check("identity", g_power_identity(dual, q))
    report.add_check("identity", structural_identities(solution))

    _add_verification(
        report, verify(CandidateMeasure.from_solution(solution), market, basis, opts.verify)
    )

    if call is not None:
        strike, asset = call
        report.add(f"price.call.{asset}.{strike:g}", price(solution, call_payoff(market, asset, strike)))
    if csv_file is not None:
        solution.to_frame(market.states).to_csv(csv_file, index=False, float_format="%.17g")
        logger.info("Wrote per-state table to %s", csv_file)
    if candidate_file is not None:
        Path(candidate_file).write_text(
            dump_candidate(market.states, solution.g_star, q), encoding="utf-8"
        )
        logger.info("Wrote candidate to %s", candidate_file)
    return report


def cmd_verify(
    market_file: str | Path,
    candidate_file: str | Path,
    q: float | None = None,
    opts: RunOptions | None = None,
) -> RunReport:
    """Verify a candidate file against a market file; q must agree with the file when given."""
    opts = opts or RunOptions()
    report = RunReport(command="verify", seed=opts.verify.seed)
    report.add_input(market_file)
    report.add_input(candidate_file)
    market = load_market(market_file)
    candidate = load_candidate(candidate_file, market, q)
    report.add("q", candidate.q)
    _add_verification(report, verify(candidate, market, gain_basis(market), opts.verify))
    return report


def cmd_sweep(
    market_file: str | Path, q_list: Sequence[float], opts: RunOptions | None = None
) -> pd.DataFrame:
    """
    Solve a market for several exponents.

    :param market_file: Market file.
    :param q_list: Exponents; solved in increasing order.
    :param opts: Run options.
    :return: One row per exponent.
    :raises ValueError: If q_list is empty.
    """
    if not q_list:
        raise ValueError("no exponents")
    opts = opts or RunOptions()
    market = load_market(market_file)
    basis = gain_basis(market)

    rows = []
    previous = None
    for q in sorted(float(q) for q in q_list):
        dual = dual_project(market, basis, q, opts.solver)
        primal = primal_minimize(market, basis, q, opts.solver)
        certificate = duality_certificate(dual, primal, DUALITY_TOL)
        solution = assemble(dual, q)
        identities = mu_consistency(solution, q)
        rows.append(
            {
                "q": q,
                "p": solution.p,
                "p_norm": dual.p_norm,
                "q_norm": primal.q_norm,
                "mu": solution.mu,
                "classification": solution.classification.value,
                "duality_gap": certificate["duality_gap"].value,
                "duality_pass": certificate.passed,
                "identities_pass": identities.passed,
                # Minimal q-norms cannot decrease in q.
                "q_norm_monotone": previous is None
                or primal.q_norm >= previous.q_norm * (1.0 - IDENTITY_TOL),
                "density_change": float("nan")
                if previous is None
                else float(np.max(np.abs(solution.density.values - previous.density.values))),
            }
        )
        previous = solution
    return pd.DataFrame(rows)


def _sweep_report(table: pd.DataFrame, market_file: str | Path) -> RunReport:
    report = RunReport(command="sweep")
    report.add_input(market_file)
    for row in table.itertuples(index=False):
        prefix = f"q={row.q:g}"
        report.add(f"{prefix}.p_norm", row.p_norm)
        report.add(f"{prefix}.q_norm", row.q_norm)
        report.add(f"{prefix}.mu", row.mu)
        report.add(f"{prefix}.classification", row.classification)
        report.add(f"{prefix}.duality_gap", row.duality_gap, DUALITY_TOL, bool(row.duality_pass))
        report.require(f"{prefix}.identities", bool(row.identities_pass))
        report.require(f"{prefix}.q_norm_monotone", bool(row.q_norm_monotone))
    return report


def cmd_simulate(spec_file: str | Path, opts: RunOptions | None = None) -> RunReport:
    """
    Monte Carlo validation of a diffusion-spec file.

    Estimates c_H, compares it with its closed form where the preset admits one and
    evaluates the pathwise identities that apply to the preset.

    :param spec_file: Diffusion-spec file.
    :param opts: Run options; CLI values override the file's [simulation] table.
    :return: The report.
    """
    opts = opts or RunOptions()
    spec, extras = load_diffusion(spec_file)
    seed = opts.seed if opts.seed is not None else extras.get("seed", DEFAULT_SEED)
    paths = opts.paths if opts.paths is not None else extras.get("paths", DEFAULT_PATHS)
    steps = opts.steps if opts.steps is not None else extras.get("steps", DEFAULT_STEPS)
    eta = extras.get("eta")
    xi = extras.get("xi")

    report = RunReport(command="simulate", seed=seed)
    report.add_input(spec_file)
    report.add("spec.name", spec.name)
    report.add("spec.q", spec.q)
    report.add("spec.T", spec.T)
    report.add("paths", paths)
    report.add("steps", steps)

    estimate = ch_monte_carlo(spec, eta, paths, steps, seed)
    report.add("ch.value", estimate.value)
    report.add("ch.std_error", estimate.std_error)
    if estimate.closed_form is not None:
        report.add("ch.closed_form", estimate.closed_form)
        report.add(
            "ch.closed_form_gap",
            estimate.closed_form_gap,
            N_STD * estimate.std_error,
            estimate.closed_form_gap <= N_STD * estimate.std_error,
        )
    gap_window = N_STD * estimate.moment_gap_std_error
    report.add(
        "ch.moment_gap",
        abs(estimate.moment_gap),
        gap_window,
        abs(estimate.moment_gap) <= gap_window,
    )

    if eta is None and spec.lambda_is_deterministic:
        error = pathwise_identity_check(spec, paths, steps, seed)
        report.add("pathwise.max_abs_error", error, PATHWISE_TOL, error < PATHWISE_TOL)

    residual = fundamental_eq_residual(spec, eta, xi, paths, steps, seed)
    if spec.lambda_is_deterministic:
        report.add(
            "fundamental.max_abs_residual",
            residual.max_abs,
            PATHWISE_TOL,
            residual.max_abs < PATHWISE_TOL,
        )
    else:
        report.add("fundamental.max_abs_residual", residual.max_abs)
    report.add("fundamental.mean_abs_residual", residual.mean_abs)

    if eta is None:
        moment = density_moment_check(spec, paths, steps, seed)
        window = N_STD * moment.std_error
        report.add("moment.value", moment.value)
        report.add("moment.target", moment.target)
        report.add(
            "moment.gap", abs(moment.value - moment.target), window, moment.within(N_STD)
        )

    if eta is None and spec.lambda_is_price_free:
        error = volatility_representation_check(spec, paths, steps, seed)
        report.add("representation.max_abs_error", error, PATHWISE_TOL, error < PATHWISE_TOL)
        independent = isinstance(spec.rho_fn, Constant) and spec.rho_fn.value == 0.0
        if independent and not spec.lambda_is_deterministic:
            volatility = ch_volatility_only(spec, None, paths, steps, seed)
            combined = math.hypot(estimate.std_error, volatility.std_error)
            gap = abs(estimate.value - volatility.value)
            report.add("ch.volatility_only", volatility.value)
            report.add("ch.volatility_only_gap", gap, N_STD * combined, gap <= N_STD * combined)
    return report


def cmd_oracle(market_file: str | Path, q: float, opts: RunOptions | None = None) -> RunReport:
    """Compare primal_minimize with the brute-force grid oracle."""
    opts = opts or RunOptions()
    report = RunReport(command="oracle")
    report.add_input(market_file)
    market = load_market(market_file)
    basis = gain_basis(market)
    report.add("q", float(q))
    report.add("affine_dimension", martingale_affine_set(market, basis).dimension)
    primal = primal_minimize(market, basis, q, opts.solver)
    oracle = brute_force_oracle(market, basis, q, GridOptions())
    scale = max(1.0, float(np.max(np.abs(primal.u.values))))
    distance = float(np.max(np.abs(primal.u.values - oracle.values))) / scale
    report.add("oracle.q_norm", oracle.norm(q))
    report.add("primal.q_norm", primal.q_norm)
    report.add("oracle.sup_distance", distance, ORACLE_TOL, distance < ORACLE_TOL, scale)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qoptimal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--tol", type=float, default=SolverOptions.tol)
        sub.add_argument("--max-iter", type=int, default=SolverOptions.max_iter)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--out", type=Path, default=None, help="Write the report here.")
        sub.add_argument("--json", type=Path, default=None, help="Structured report dump.")

    solve = commands.add_parser("solve", help="Compute and certify the q-optimal measure.")
    solve.add_argument("market", type=Path)
    solve.add_argument("--q", type=float, required=True)
    solve.add_argument("--call", type=float, default=None, metavar="STRIKE")
    solve.add_argument("--asset", type=int, default=0, metavar="IDX")
    solve.add_argument("--csv", type=Path, default=None)
    solve.add_argument("--export-candidate", type=Path, default=None)
    common(solve)

    check = commands.add_parser("verify", help="Verify a candidate measure.")
    check.add_argument("--market", type=Path, required=True)
    check.add_argument("--candidate", type=Path, required=True)
    check.add_argument("--q", type=float, default=None)
    check.add_argument("--samples", type=int, default=VerifyOptions.n_samples)
    common(check)

    sweep = commands.add_parser("sweep", help="Solve for several exponents.")
    sweep.add_argument("market", type=Path)
    sweep.add_argument("--q", type=float, nargs="*", default=[])
    sweep.add_argument("--csv", type=Path, default=None)
    common(sweep)

    simulate = commands.add_parser("simulate", help="Monte Carlo validation of a diffusion.")
    simulate.add_argument("--spec", type=Path, required=True)
    simulate.add_argument("--paths", type=int, default=None)
    simulate.add_argument("--steps", type=int, default=None)
    common(simulate)

    oracle = commands.add_parser("oracle", help="Cross-check against the grid oracle.")
    oracle.add_argument("market", type=Path)
    oracle.add_argument("--q", type=float, required=True)
    common(oracle)
    return parser


def _options(args: argparse.Namespace) -> RunOptions:
    verify_opts = VerifyOptions(
        seed=args.seed if args.seed is not None else DEFAULT_SEED,
        n_samples=getattr(args, "samples", VerifyOptions.n_samples),
    )
    return RunOptions(
        solver=SolverOptions(tol=args.tol, max_iter=args.max_iter),
        verify=verify_opts,
        seed=args.seed,
        paths=getattr(args, "paths", None),
        steps=getattr(args, "steps", None),
    )


def _run(args: argparse.Namespace) -> RunReport:
    opts = _options(args)
    if args.command == "solve":
        call = (args.call, args.asset) if args.call is not None else None
        return cmd_solve(
            args.market,
            args.q,
            opts,
            call=call,
            csv_file=args.csv,
            candidate_file=args.export_candidate,
        )
    if args.command == "verify":
        return cmd_verify(args.market, args.candidate, args.q, opts)
    if args.command == "sweep":
        table = cmd_sweep(args.market, args.q, opts)
        if args.csv is not None:
            table.to_csv(args.csv, index=False, float_format="%.17g")
        return _sweep_report(table, args.market)
    if args.command == "simulate":
        return cmd_simulate(args.spec, opts)
    return cmd_oracle(args.market, args.q, opts)


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run the command line.

    :param argv: Arguments without the program name; sys.argv by default.
    :return: Exit code: 0 pass, 1 usage or parse error, 2 infeasible market,
        3 solver non-convergence, 4 verification failure.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    started = time.perf_counter()
    try:
        report = _run(args)
    except MarketSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleMarketError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConvergenceError, SimulationError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DegenerateCandidateError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report.command = shlex.join(["qoptimal", *argv])
    report.wall_clock = time.perf_counter() - started
    text = report.render()
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    if args.json is not None:
        report.dump_json(args.json)
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_VERIFICATION
