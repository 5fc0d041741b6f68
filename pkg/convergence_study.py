#!/usr/bin/env python3
"""
Convergence Study Module
Discrete l-infinity stage errors against a reference solution over a sequence
of grids, with estimated orders log2(e_N / e_2N) between doubling grids
"""

import logging
import math
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel

from kkt_solver import DiscreteSolution, KKTOptions, solve_kkt
from method_catalog import PeerMethodSuite, resolve_suite
from problems import ProblemSpec, get_problem
from reference import ReferenceSolution, reference_solution
from settings import get_settings

logger = logging.getLogger(__name__)

MIN_REFERENCE_FACTOR = 8
KKT_REFERENCE_FACTOR = 24


class ConvergenceTable(BaseModel):
    """Per-variable errors per grid; orders[var][i] compares grids i-1 and i"""

    method: str
    problem: str
    grids: List[int]
    variables: List[str]
    errors: Dict[str, List[float]]
    orders: Dict[str, List[Optional[float]]]
    reference_backend: str
    reference_discrepancy: float

    def error(self, var: str, N: int) -> float:
        return self.errors[var][self.grids.index(N)]

    def order_range(self, var: str) -> Optional[tuple]:
        values = [o for o in self.orders[var] if o is not None]
        if not values:
            return None
        return min(values), max(values)


def variable_names(m: int) -> List[str]:
    return [f"y{i + 1}" for i in range(m)] + [f"p{i + 1}" for i in range(m)]


def stage_errors(solution: DiscreteSolution, reference: ReferenceSolution) -> np.ndarray:
    """Max over n, i of |Y_ni - y((n + c_i) h)| per component, then the same for P; shape (2m,)"""
    m = solution.Y.shape[-1]
    y_ref, p_ref = reference(solution.stage_times.ravel())
    y_error = np.max(np.abs(solution.Y.reshape(-1, m) - y_ref), axis=0)
    p_error = np.max(np.abs(solution.P.reshape(-1, m) - p_ref), axis=0)
    return np.concatenate([y_error, p_error])


def estimated_orders(grids: List[int], errors: List[float]) -> List[Optional[float]]:
    """log2(e_prev / e_next) where the grid doubles, None elsewhere"""
    orders: List[Optional[float]] = [None]
    for i in range(1, len(grids)):
        if grids[i] == 2 * grids[i - 1] and errors[i] > 0 and errors[i - 1] > 0:
            orders.append(math.log2(errors[i - 1] / errors[i]))
        else:
            orders.append(None)
    return orders


def default_reference_n(spec: ProblemSpec, grids: List[int], backend: str) -> int:
    """
    Reference grid for a study: at least the problem default and
    MIN_REFERENCE_FACTOR x the largest grid; the discrete backend uses
    KKT_REFERENCE_FACTOR, since its second-order adjoint error shrinks slowly
    """
    factor = KKT_REFERENCE_FACTOR if backend == "kkt" else MIN_REFERENCE_FACTOR
    return max(spec.reference_n, factor * grids[-1])


def converge_study(method: Union[str, PeerMethodSuite], problem: Union[str, ProblemSpec],
                   grids: Optional[List[int]] = None, n_ref: Optional[int] = None,
                   backend: Optional[str] = None, validate: bool = True) -> ConvergenceTable:
    """
    Run solve_kkt on every grid and compare with one shared reference

    Args:
        method: suite or builtin name / method file path
        problem: ProblemSpec or registered problem name
        grids: strictly increasing N values, defaults to the problem's grids
        n_ref: reference grid, defaults to default_reference_n
        backend: reference backend, defaults to PEER_REFERENCE_BACKEND
        validate: check the state and adjoint reference discrepancies against
            the smallest state and adjoint errors

    Raises:
        ReferenceNotConverged: reference not accurate enough for the errors measured
        NoConvergence: a discrete solve failed
    """
    suite = method if isinstance(method, PeerMethodSuite) else resolve_suite(method)
    spec = problem if isinstance(problem, ProblemSpec) else get_problem(problem)
    grids = list(grids or spec.grids)
    if not grids or any(b <= a for a, b in zip(grids, grids[1:])):
        raise ValueError(f"grids must be strictly increasing, got {grids}")
    backend = backend or get_settings().reference_backend
    n_ref = n_ref or default_reference_n(spec, grids, backend)
    if n_ref < MIN_REFERENCE_FACTOR * grids[-1]:
        raise ValueError(f"n_ref = {n_ref} must be at least {MIN_REFERENCE_FACTOR} x the largest grid ({grids[-1]})")

    bvp = spec.problem
    reference = reference_solution(bvp, n_ref, backend)
    names = variable_names(bvp.m)
    errors: Dict[str, List[float]] = {name: [] for name in names}

    logger.info(f"🚀 Convergence study {suite.name} on {spec.name}: N = {grids}, {backend} reference")
    for N in grids:
        options = KKTOptions(initial_guess=reference)
        solution = solve_kkt(suite, bvp, N, options)
        for name, value in zip(names, stage_errors(solution, reference)):
            errors[name].append(float(value))
        logger.info(f"✅ N = {N}: " + ", ".join(f"{name} {errors[name][-1]:.2e}" for name in names))

    if validate:
        reference.validate_components({
            kind: min(min(errors[name]) for name in names if name.startswith(kind)) for kind in ("y", "p")
        })

    orders = {name: estimated_orders(grids, errors[name]) for name in names}
    return ConvergenceTable(
        method=suite.name,
        problem=spec.name,
        grids=grids,
        variables=names,
        errors=errors,
        orders=orders,
        reference_backend=backend,
        reference_discrepancy=reference.discrepancy,
    )
