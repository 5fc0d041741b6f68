#!/usr/bin/env python3
"""
Peer Methods - Command Line Interface
Order reports, stability analysis, Q-curve scans, method synthesis, coupled
forward/adjoint solves and convergence studies
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from errors import PeerError
from settings import get_settings

logger = logging.getLogger(__name__)

STABILITY_ROLES = ("standard", "end")


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, get_settings().log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _box(text: str):
    from stability_analysis import SCAN_BOXES, ScanBox

    if text in SCAN_BOXES:
        return SCAN_BOXES[text]
    try:
        d1_min, d1_max, d3_min, d3_max = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected d1min,d1max,d3min,d3max or one of {', '.join(SCAN_BOXES)}, got {text!r}")
    if d1_min >= d1_max or d3_min >= d3_max:
        raise argparse.ArgumentTypeError(f"empty box {text!r}")
    return ScanBox(d1_min=d1_min, d1_max=d1_max, d3_min=d3_min, d3_max=d3_max)


def _emit_csv(path: Optional[str], text: str) -> None:
    if path:
        from table_formatting import write_text
        write_text(path, text)


def _problem(args):
    from problems import get_problem, van_der_pol

    if args.epsilon is not None:
        spec = get_problem(args.problem)
        if spec.name != "van_der_pol":
            raise PeerError(f"--epsilon applies to van_der_pol only, not {spec.name}")
        return van_der_pol(args.epsilon)
    return get_problem(args.problem)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_verify_orders(args) -> int:
    from method_catalog import resolve_suite
    from order_analysis import achieved_orders
    from table_formatting import format_order_report

    suite = resolve_suite(args.method)
    report = achieved_orders(suite, args.tol)
    print(format_order_report(report))
    return 0


def cmd_stability(args) -> int:
    from method_catalog import resolve_suite
    from stability_analysis import stability_report
    from table_formatting import format_stability_reports

    suite = resolve_suite(args.method)
    reports = [stability_report(getattr(suite, role), suite.name, args.ntheta) for role in STABILITY_ROLES]
    print(format_stability_reports(reports))
    return 0


def cmd_scan(args) -> int:
    from stability_analysis import scan_q_curve
    from table_formatting import format_scan, scan_csv

    result = scan_q_curve(args.box, args.seeds, rng_seed=args.rng, n_theta=args.ntheta, workers=args.workers)
    print(format_scan(result))
    _emit_csv(args.csv, scan_csv(result))
    return 0


def cmd_synthesize(args) -> int:
    from method_catalog import format_method_file
    from order_analysis import synthesize_standard
    from stability_analysis import alpha_angle, zero_stability
    from table_formatting import format_synthesis, write_text

    result = synthesize_standard(args.d1, args.d3)
    print(format_synthesis(result))
    if not result.success:
        return 1

    stable, _ = zero_stability(result.matrices)
    if stable:
        print(f"zero-stable, alpha = {alpha_angle(result.matrices, args.ntheta):.3f} deg")
    else:
        print("not zero-stable")
    if args.out:
        name = args.name or f"synth_{args.d1:g}_{args.d3:g}"
        write_text(args.out, format_method_file(name, result.nodes.c, [result.matrices]))
    return 0


def cmd_solve(args) -> int:
    from kkt_solver import KKTOptions, solve_kkt
    from method_catalog import resolve_suite
    from table_formatting import format_solution, solution_csv

    suite = resolve_suite(args.method)
    spec = _problem(args)
    solution = solve_kkt(suite, spec.problem, args.N, KKTOptions(strategy=args.strategy))
    print(format_solution(solution))
    _emit_csv(args.csv, solution_csv(solution))
    return 0


def cmd_converge(args) -> int:
    from convergence_study import converge_study
    from table_formatting import convergence_csv, format_convergence_table

    spec = _problem(args)
    table = converge_study(args.method, spec, args.grids, n_ref=args.nref, backend=args.backend,
                           validate=not args.no_validate)
    print(format_convergence_table(table))
    _emit_csv(args.csv, convergence_csv(table))
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from api import app

    settings = get_settings()
    host = args.host or settings.api_host
    port = args.port or settings.api_port
    logger.info(f"🚀 Launching report service on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peer",
        description="Implicit Peer two-step methods and their discrete adjoints",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-orders", help="order condition report")
    p.add_argument("--method", required=True, help="builtin name or method file")
    p.add_argument("--tol", type=float, default=None, help="residual tolerance (default PEER_ORDER_TOL)")
    p.set_defaults(func=cmd_verify_orders)

    p = sub.add_parser("stability", help="zero-stability, A(alpha) and norm bounds")
    p.add_argument("--method", required=True)
    p.add_argument("--ntheta", type=int, default=None)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("scan", help="random multistart scan of the Q = 0 curve")
    p.add_argument("--box", type=_box, default="unit", help="d1min,d1max,d3min,d3max or a named box")
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--rng", type=int, default=0)
    p.add_argument("--ntheta", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synthesize", help="standard method for node differences (d1, d3)")
    p.add_argument("--d1", type=float, required=True)
    p.add_argument("--d3", type=float, required=True)
    p.add_argument("--ntheta", type=int, default=None)
    p.add_argument("--name", default=None, help="method name written to --out")
    p.add_argument("--out", default=None, help="write the standard set as a method file")
    p.set_defaults(func=cmd_synthesize)

    for name, func, help_text in (
        ("solve", cmd_solve, "solve the coupled forward/adjoint system on one grid"),
        ("converge", cmd_converge, "error and order table over a grid sequence"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--method", required=True)
        p.add_argument("--problem", required=True, help="rayleigh or van_der_pol")
        p.add_argument("--epsilon", type=float, default=None, help="van der Pol stiffness parameter")
        p.add_argument("--csv", default=None)
        p.set_defaults(func=func)
        if name == "solve":
            p.add_argument("--N", type=int, required=True)
            p.add_argument("--strategy", choices=("auto", "sweeps", "newton"), default="auto")
        else:
            p.add_argument("--grids", type=_int_list, default=None, help="comma-separated N values")
            p.add_argument("--nref", type=int, default=None)
            p.add_argument("--backend", choices=("collocation", "kkt"), default=None)
            p.add_argument("--no-validate", action="store_true", help="skip the reference accuracy check")

    p = sub.add_parser("serve", help="run the JSON report service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 1 on a computation failure, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except PeerError as e:
        logger.error(f"❌ {args.command} failed: {type(e).__name__}: {e}")
        return 1
    except (OSError, ValueError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(cli_dispatch())
