#!/usr/bin/env python3
"""
Table Formatting Module
Aligned text tables for the terminal and CSV files for the analysis results
"""

import csv
import io
import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from convergence_study import ConvergenceTable
from kkt_solver import DiscreteSolution
from order_analysis import OrderReport, SynthesisResult
from stability_analysis import ScanResult, StabilityReport

logger = logging.getLogger(__name__)


def _full(x: Optional[float]) -> str:
    """17 significant digits; empty for missing values"""
    if x is None:
        return ""
    return f"{x:.17g}"


def _align(rows: List[List[str]]) -> str:
    widths = [max(len(row[j]) for row in rows) for j in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(width) for cell, width in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info(f"💾 Wrote {path}")


# ---------------------------------------------------------------------------
# Convergence tables
# ---------------------------------------------------------------------------

def format_convergence_table(table: ConvergenceTable) -> str:
    """
    Errors per grid with the estimated order in brackets, e.g. "4.23e-04 (2.9)"
    """
    rows = [["N"] + table.variables]
    for i, N in enumerate(table.grids):
        row = [str(N)]
        for var in table.variables:
            cell = f"{table.errors[var][i]:.2e}"
            order = table.orders[var][i]
            if order is not None:
                cell += f" ({order:.1f})"
            row.append(cell)
        rows.append(row)
    title = f"{table.method} on {table.problem} (reference: {table.reference_backend}, " \
            f"discrepancy {table.reference_discrepancy:.1e})"
    return f"{title}\n{_align(rows)}"


def convergence_csv(table: ConvergenceTable) -> str:
    """Rows N,var,error,order; order empty where it is not defined"""
    rows = []
    for i, N in enumerate(table.grids):
        for var in table.variables:
            rows.append([str(N), var, _full(table.errors[var][i]), _full(table.orders[var][i])])
    return _csv_text(["N", "var", "error", "order"], rows)


def parse_convergence_csv(text: str) -> Dict[str, Dict[int, tuple]]:
    """Inverse of convergence_csv: {var: {N: (error, order or None)}}"""
    parsed: Dict[str, Dict[int, tuple]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        order = float(row["order"]) if row["order"] else None
        parsed.setdefault(row["var"], {})[int(row["N"])] = (float(row["error"]), order)
    return parsed


# ---------------------------------------------------------------------------
# Order and stability reports
# ---------------------------------------------------------------------------

def format_order_report(report: OrderReport) -> str:
    rows = [["condition", "required", "achieved", "status", "max residual"]]
    for condition in report.conditions:
        worst = max(condition.residuals.get(q, 0.0) for q in range(1, condition.required + 1)) \
            if condition.required else 0.0
        rows.append([
            condition.kind,
            str(condition.required),
            str(condition.achieved),
            "ok" if condition.met else "FAIL",
            f"{worst:.2e}",
        ])
    lines = [f"{report.method}: order conditions (tolerance {report.tolerance:.0e})", _align(rows)]
    if report.leading_error is not None:
        eta = ", ".join(f"{x:.6g}" for x in report.leading_error)
        lines.append(f"leading error (standard set): [{eta}]")
    return "\n".join(lines)


def format_stability_reports(reports: List[StabilityReport]) -> str:
    rows = [["set", "zero-stable", "semisimple", "rho", "alpha [deg]", "|X1^-1 B X1|"]]
    for report in reports:
        rows.append([
            report.role,
            "yes" if report.zero_stable else "no",
            "yes" if report.unit_eigen_semisimple else "no",
            f"{report.spectral_radius:.6f}",
            "-" if report.alpha_degrees is None else f"{report.alpha_degrees:.3f}",
            "-" if report.norm_bound_X1 is None else f"{report.norm_bound_X1:.4f}",
        ])
    method = reports[0].method if reports else ""
    return f"{method}: stability\n{_align(rows)}"


# ---------------------------------------------------------------------------
# Scan, synthesis and solution output
# ---------------------------------------------------------------------------

def format_scan(result: ScanResult, top: int = 10) -> str:
    stable = sorted((r for r in result.records if r.alpha_degrees is not None),
                    key=lambda r: -r.alpha_degrees)[:top]
    rows = [["d1", "d3", "alpha [deg]", "|Q|"]]
    for record in stable:
        rows.append([f"{record.d1:.4f}", f"{record.d3:.4f}", f"{record.alpha_degrees:.3f}",
                     f"{record.q_residual:.1e}"])
    header = f"Q-curve scan: {result.n_seeds} seeds (rng {result.rng_seed}), {len(result.records)} points, " \
             f"{sum(r.zero_stable for r in result.records)} zero-stable"
    if len(rows) == 1:
        return header
    return f"{header}\n{_align(rows)}"


def scan_csv(result: ScanResult) -> str:
    rows = [[_full(r.d1), _full(r.d3), _full(r.q_residual), "1" if r.zero_stable else "0", _full(r.alpha_degrees)]
            for r in result.records]
    return _csv_text(["d1", "d3", "q_residual", "zero_stable", "alpha"], rows)


def format_synthesis(result: SynthesisResult) -> str:
    lines = [
        f"nodes c = {np.array2string(result.nodes.c, precision=6)}",
        f"Q(d1, d3) = {result.q_value:.3e}, residual {result.residual:.2e} after {result.iterations} iterations, "
        f"kernel dimension {result.nullity}",
    ]
    if result.matrices is None:
        lines.append("no method: residual above the acceptance threshold")
        return "\n".join(lines)
    for label, matrix in (("A", result.matrices.A), ("B", result.matrices.B), ("K", result.matrices.K)):
        lines.append(f"{label} =\n{np.array2string(matrix, precision=10, suppress_small=True)}")
    return "\n".join(lines)


def solution_csv(solution: DiscreteSolution) -> str:
    """One row per stage: t, n, i, y1..ym, p1..pm"""
    N1, s, m = solution.Y.shape
    times = solution.stage_times
    header = ["t", "n", "i"] + [f"y{j + 1}" for j in range(m)] + [f"p{j + 1}" for j in range(m)]
    rows = []
    for n in range(N1):
        for i in range(s):
            rows.append([_full(times[n, i]), str(n), str(i + 1)]
                        + [_full(x) for x in solution.Y[n, i]] + [_full(x) for x in solution.P[n, i]])
    return _csv_text(header, rows)


def format_solution(solution: DiscreteSolution) -> str:
    m = solution.Y.shape[-1]
    rows = [["", "value"]]
    for j in range(m):
        rows.append([f"y{j + 1}(T)", f"{solution.yh_T[j]:.10g}"])
    for j in range(m):
        rows.append([f"p{j + 1}(0)", f"{solution.ph_0[j]:.10g}"])
    header = f"{solution.method} on {solution.problem}, N = {solution.grid.N}: {solution.strategy}, " \
             f"{solution.sweeps} sweeps, {solution.newton_iterations} Newton steps, residual {solution.residual_norm:.2e}"
    return f"{header}\n{_align(rows)}"
