#!/usr/bin/env python3
import os
import sys
import json
import logging
import argparse
from typing import Any, Sequence

import numpy as np

from slidesolve import ProblemSpec, TimeGrid, load_problem, problem_to_dict, config_with_overrides, config_to_dict, \
    functional_for, fd_gradient, compare_bundles, solve, verify_solution, build_state, forward_difference, \
    derive_cubic_coeffs, read_trajectory_csv, write_trajectory_csv, write_trace_csv, write_json, read_json, \
    RunArtifacts, SlideSolveError, ProblemValidationError, ConvergenceError, VerificationError, EXIT_CODE_BY_ERROR, \
    exit_code_for, DEFAULT_LOG_LEVEL

_log = logging.getLogger("slidesolve_cli")

EXIT_OK = 0
EXIT_INVALID = EXIT_CODE_BY_ERROR[ProblemValidationError]
EXIT_NOT_CONVERGED = EXIT_CODE_BY_ERROR[ConvergenceError]
EXIT_VERIFICATION_FAILED = EXIT_CODE_BY_ERROR[VerificationError]


def _emit(data: Any) -> None:
    sys.stdout.write(json.dumps(data, indent=2) + "\n")


def _grid(spec: ProblemSpec, nodes: int | None) -> TimeGrid:
    return TimeGrid(nodes=nodes or spec.grid_nodes, horizon=spec.horizon)


def read_params(source: str) -> np.ndarray:
    """
    Parameters from a JSON list literal, a JSON file with a bare list, or a report.json (its `final_p`).
    """
    if os.path.exists(source):
        data = read_json(source)
    else:
        try:
            data = json.loads(source)
        except json.JSONDecodeError:
            raise FileNotFoundError(f"parameter file `{source}` does not exist")
    if isinstance(data, dict):
        if "final_p" not in data:
            raise ProblemValidationError("parameter object has no `final_p` key", field_path="/final_p")
        data = data["final_p"]
    if not isinstance(data, list) or not all(isinstance(v, (int, float)) for v in data):
        raise ProblemValidationError("parameters must be a list of numbers", field_path="")
    return np.array(data, dtype=float)


def _point(spec: ProblemSpec, args: argparse.Namespace) -> tuple[TimeGrid, np.ndarray, np.ndarray]:
    """ Grid, z and p for `eval` and `gradcheck`: zero z and the file's parameters unless overridden. """
    if args.z_file:
        table = read_trajectory_csv(args.z_file)
        if table.x.shape[1] != spec.n:
            raise ProblemValidationError(
                f"trajectory has {table.x.shape[1]} coordinates, the problem has {spec.n}", field_path="/n")
        grid = _grid(spec, args.grid or table.times.shape[0])
        if grid.nodes != table.times.shape[0]:
            raise ProblemValidationError(
                f"trajectory has {table.times.shape[0]} rows, the grid has {grid.nodes} nodes", field_path="/grid_nodes")
        z = table.z
    else:
        grid = _grid(spec, args.grid)
        z = np.zeros((grid.nodes, spec.n))
    p = read_params(args.params) if args.params else np.array(spec.initial_params)
    spec.surface.check_params(p)
    return grid, z, p


def cmd_solve(args: argparse.Namespace) -> int:
    spec = load_problem(args.problem)
    grid = _grid(spec, args.grid)
    descent = config_with_overrides(
        spec.descent, {"max_outer_iters": args.max_iter, "tol_i": args.tol_i, "tol_grad": args.tol_grad})
    verify = config_with_overrides(spec.verify, {"method": args.method, "h": args.h})

    report = solve(spec, grid, config=descent)
    state = build_state(grid, report.final_z, spec.x0)
    verification = verify_solution(spec, grid, report.final_p, solver_state=state, config=verify)

    artifacts = RunArtifacts(out_dir=args.out)
    out = report.to_dict()
    out.update({
        "problem": problem_to_dict(spec),
        "grid": {"nodes": grid.nodes, "T": grid.horizon},
        "verify_config": config_to_dict(verify),
        "verify": verification.to_dict()
    })
    write_trajectory_csv(artifacts.trajectory, grid, state, report.final_z)
    write_json(artifacts.report, out)
    write_json(artifacts.verify, verification.to_dict())
    write_trace_csv(artifacts.trace, (r.to_dict() for r in report.iterations))
    _log.info("Artifacts written", extra={"out_dir": artifacts.out_dir})

    _emit({
        "converged": report.converged, "reason": report.reason.value, "total": report.final.total,
        "final_p": report.final_p.tolist(), "verified": verification.passed
    })
    report.raise_for_status()
    verification.raise_for_status()
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    spec = load_problem(args.problem)
    grid, z, p = _point(spec, args)
    _emit(functional_for(spec, grid).value(z, p).to_dict())
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    spec = load_problem(args.problem)
    grid, z, p = _point(spec, args)
    handle = functional_for(spec, grid)
    errors = compare_bundles(handle.gradient(z, p), fd_gradient(handle, grid, z, p, step=args.step))
    passed = errors["rel_z"] <= args.tol and errors["rel_p"] <= args.tol
    _emit({**errors, "tol": args.tol, "passed": passed})
    return EXIT_OK if passed else EXIT_VERIFICATION_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    spec = load_problem(args.problem)
    grid = _grid(spec, args.grid)
    config = config_with_overrides(spec.verify, {"method": args.method, "h": args.h})
    report = verify_solution(spec, grid, read_params(args.params), config=config)
    if args.out:
        artifacts = RunArtifacts(out_dir=args.out)
        write_json(artifacts.verify, report.to_dict())
        write_trajectory_csv(artifacts.trajectory, grid, report.state, forward_difference(grid, report.state))
    _emit(report.to_dict())
    report.raise_for_status()
    return EXIT_OK


def cmd_cubic_coeffs(args: argparse.Namespace) -> int:
    coeffs = derive_cubic_coeffs(args.k, args.delta)
    _emit({"e": coeffs.e, "f": coeffs.f})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slidesolve", description="Find sliding-mode trajectories of relay systems")
    ap.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help="Logging level (default: %(default)s)")
    sub = ap.add_subparsers(dest="command", required=True)

    def problem_arg(p: argparse.ArgumentParser) -> None:
        p.add_argument("problem", help="Problem file (JSON or YAML)")
        p.add_argument("--grid", type=int, help="Number of grid nodes (overrides the problem file)")

    def integrator_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--method", choices=["rk45", "rk4"], help="Closed-loop integrator")
        p.add_argument("--h", type=float, help="Fixed RK4 step (default 1e-4 * T)")

    def point_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--z-file", help="Trajectory CSV to take z from (default: zero grid)")
        p.add_argument("--params", help="Surface parameters: JSON list, JSON file or report.json")

    p = sub.add_parser("solve", help="Minimize the residual functional and verify the result")
    problem_arg(p)
    integrator_args(p)
    p.add_argument("--out", required=True, help="Directory for trajectory.csv, report.json, verify.json, trace.csv")
    p.add_argument("--max-iter", type=int, help="Maximum number of outer descent cycles")
    p.add_argument("--tol-i", type=float, help="Stop once the functional is at most this value")
    p.add_argument("--tol-grad", type=float, help="Stop once the gradient norm is at most this value")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("eval", help="Print the functional breakdown at a point")
    problem_arg(p)
    point_args(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="Compare analytic and finite-difference gradients")
    problem_arg(p)
    point_args(p)
    p.add_argument("--step", type=float, default=1e-6, help="Finite-difference step (default: %(default)s)")
    p.add_argument("--tol", type=float, default=1e-6, help="Largest accepted relative error (default: %(default)s)")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("verify", help="Integrate the closed loop with given surface parameters")
    problem_arg(p)
    p.add_argument("params", help="Parameters: JSON list, JSON file or report.json")
    integrator_args(p)
    p.add_argument("--out", help="Directory for verify.json and trajectory.csv")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("cubic-coeffs", help="Print the C1 coefficients of the inner branch of u2")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(handler=cmd_cubic_coeffs)
    return ap


def run_pipeline(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand and return its exit status: 0 success, 1 invalid input, 2 no convergence,
    3 verification thresholds exceeded.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    logging.getLogger().setLevel(args.log_level.upper())

    try:
        return args.handler(args)
    except (SlideSolveError, FileNotFoundError) as e:
        code = exit_code_for(e)
        _log.error(f"{args.command} failed: {e}", extra={"exit_code": code})
        sys.stderr.write(f"Error: {e}\n")
        return code


def cli() -> None:
    sys.exit(run_pipeline(sys.argv[1:]))


if __name__ == "__main__":
    try:
        cli()
    except KeyboardInterrupt:
        sys.stderr.write("Interrupted by user\n")
        exit(130)
    except SystemExit:
        raise
    except Exception as e:
        sys.stderr.write(f"Error: {e}\n")
        exit(1)
