#!/usr/bin/env python3
"""
Reference Solutions
Dense evaluators t -> (y(t), p(t)) used to measure discrete errors

Two backends:
- collocation: scipy.integrate.solve_bvp on the continuous boundary value
  problem, started from a coarse discrete solve (default)
- kkt: fine-grid BDF3o32 solve with local degree-5 interpolation, validated
  against the solve on half the grid
"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import solve_bvp

from cache_manager import get_cache_manager
from errors import ReferenceNotConverged
from kkt_solver import DiscreteSolution, solve_kkt
from method_catalog import builtin_suite
from problems import BVProblem
from settings import get_settings

logger = logging.getLogger(__name__)

BACKENDS = ("collocation", "kkt")
REFERENCE_METHOD = "BDF3o32"
INTERPOLATION_POINTS = 6
COARSE_N = 80
MAX_NODES = 500000


class LagrangeInterpolant:
    """
    Piecewise degree-5 interpolation through the 6 nearest nodes

    Reproduces node values exactly and is immutable after construction.
    """

    def __init__(self, times: np.ndarray, values: np.ndarray):
        order = np.argsort(times, kind="stable")
        times, values = times[order], values[order]
        span = times[-1] - times[0]
        keep = np.concatenate([[True], np.diff(times) > 1e-12 * span])
        self.times = times[keep]
        self.values = values[keep]
        if self.times.size < INTERPOLATION_POINTS:
            raise ValueError(f"need at least {INTERPOLATION_POINTS} distinct nodes, got {self.times.size}")
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        n = self.times.size
        first = np.clip(np.searchsorted(self.times, t) - INTERPOLATION_POINTS // 2, 0, n - INTERPOLATION_POINTS)
        window = first[:, None] + np.arange(INTERPOLATION_POINTS)
        nodes = self.times[window]

        differences = t[:, None] - nodes
        exact = differences == 0.0
        numerator = np.repeat(differences[:, None, :], INTERPOLATION_POINTS, axis=1)
        denominator = nodes[:, :, None] - nodes[:, None, :]
        diagonal = np.arange(INTERPOLATION_POINTS)
        numerator[:, diagonal, diagonal] = 1.0
        denominator[:, diagonal, diagonal] = 1.0
        weights = np.prod(numerator, axis=2) / np.prod(denominator, axis=2)

        hit = exact.any(axis=1)
        weights[hit] = exact[hit].astype(np.float64)
        return np.einsum("kj,kjd->kd", weights, self.values[window])


def interpolants_from_solution(solution: DiscreteSolution, problem: BVProblem) -> Tuple[LagrangeInterpolant, LagrangeInterpolant]:
    """Interpolants for y and p through all stage values plus the boundary values"""
    m = problem.m
    times = np.concatenate([[0.0], solution.stage_times.ravel(), [problem.T]])
    y_values = np.concatenate([problem.y0[None, :], solution.Y.reshape(-1, m), solution.yh_T[None, :]])
    p_T = problem.terminal_p(solution.yh_T)
    p_values = np.concatenate([solution.ph_0[None, :], solution.P.reshape(-1, m), p_T[None, :]])
    return LagrangeInterpolant(times, y_values), LagrangeInterpolant(times, p_values)


class ReferenceSolution:
    """
    Dense reference t -> (y (k, m), p (k, m)) with a self-measured discrepancy

    discrepancy is the overall max; component_discrepancy splits it into the
    state ("y") and adjoint ("p") parts.
    """

    def __init__(self, problem: str, backend: str, n_ref: int,
                 evaluate: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]], discrepancy: float,
                 component_discrepancy: Optional[Dict[str, float]] = None):
        self.problem = problem
        self.backend = backend
        self.n_ref = n_ref
        self._evaluate = evaluate
        self.discrepancy = discrepancy
        self.component_discrepancy = component_discrepancy or {"y": discrepancy, "p": discrepancy}

    def __call__(self, t) -> Tuple[np.ndarray, np.ndarray]:
        return self._evaluate(np.atleast_1d(np.asarray(t, dtype=np.float64)))

    def _check(self, label: str, discrepancy: float, smallest_error: float, agreement: Optional[float]) -> None:
        agreement = agreement if agreement is not None else get_settings().reference_agreement
        limit = agreement * smallest_error
        if discrepancy > limit:
            raise ReferenceNotConverged(
                f"{self.backend} reference for {self.problem} (N_ref = {self.n_ref}) has {label}discrepancy "
                f"{discrepancy:.3e} > {agreement:g} * {smallest_error:.3e}"
            )
        logger.info(f"✅ Reference {label}discrepancy {discrepancy:.2e} within {limit:.2e}")

    def validate(self, smallest_error: float, agreement: Optional[float] = None) -> None:
        """
        Raises:
            ReferenceNotConverged: discrepancy above agreement * smallest_error
        """
        self._check("", self.discrepancy, smallest_error, agreement)

    def validate_components(self, smallest_errors: Dict[str, float], agreement: Optional[float] = None) -> None:
        """
        Check the state and adjoint discrepancies against the smallest error
        measured in the same family

        Args:
            smallest_errors: {"y": smallest state error, "p": smallest adjoint error}

        Raises:
            ReferenceNotConverged: a family's discrepancy above agreement * its smallest error
        """
        for kind, smallest_error in smallest_errors.items():
            self._check(f"{kind} ", self.component_discrepancy[kind], smallest_error, agreement)


def _kkt_reference(problem: BVProblem, n_ref: int) -> ReferenceSolution:
    suite = builtin_suite(REFERENCE_METHOD)
    fine = solve_kkt(suite, problem, n_ref)
    coarse = solve_kkt(suite, problem, n_ref // 2)
    y_fine, p_fine = interpolants_from_solution(fine, problem)
    y_coarse, p_coarse = interpolants_from_solution(coarse, problem)

    samples = fine.stage_times.ravel()
    components = {
        "y": float(np.max(np.abs(y_fine(samples) - y_coarse(samples)))),
        "p": float(np.max(np.abs(p_fine(samples) - p_coarse(samples)))),
    }
    discrepancy = max(components.values())
    logger.info(f"✅ Discrete reference for {problem.name}: N_ref = {n_ref}, halving discrepancy "
                f"y {components['y']:.2e}, p {components['p']:.2e}")
    return ReferenceSolution(problem.name, "kkt", n_ref, lambda t: (y_fine(t), p_fine(t)), discrepancy, components)


def _collocation_system(problem: BVProblem):
    m = problem.m

    def fun(t, z):
        y, p = z[:m].T, z[m:].T
        return np.concatenate([problem.eval_g(y, p).T, problem.eval_phi(y, p).T])

    def fun_jac(t, z):
        y, p = z[:m].T, z[m:].T
        top = np.concatenate([problem.jac_g_y(y, p), problem.jac_g_p(y, p)], axis=2)
        bottom = np.concatenate([problem.jac_phi_y(y, p), problem.jac_phi_p(y, p)], axis=2)
        return np.transpose(np.concatenate([top, bottom], axis=1), (1, 2, 0))

    def bc(za, zb):
        return np.concatenate([za[:m] - problem.y0, zb[m:] - problem.terminal_p(zb[:m])])

    def bc_jac(za, zb):
        identity, zero = np.eye(m), np.zeros((m, m))
        dza = np.block([[identity, zero], [zero, zero]])
        dzb = np.block([[zero, zero], [-problem.jac_terminal(zb[:m]), identity]])
        return dza, dzb

    return fun, fun_jac, bc, bc_jac


def _collocation_reference(problem: BVProblem, n_ref: int) -> ReferenceSolution:
    settings = get_settings()
    coarse = solve_kkt(builtin_suite(REFERENCE_METHOD), problem, COARSE_N)
    y_guess, p_guess = interpolants_from_solution(coarse, problem)

    mesh = np.linspace(0.0, problem.T, max(n_ref // 8, 101))
    z_guess = np.concatenate([y_guess(mesh), p_guess(mesh)], axis=1).T
    fun, fun_jac, bc, bc_jac = _collocation_system(problem)

    def collocate(tol):
        return solve_bvp(fun, bc, mesh, z_guess, fun_jac=fun_jac, bc_jac=bc_jac, tol=tol, max_nodes=MAX_NODES)

    tol = settings.reference_tol
    fine = collocate(tol)
    if fine.status == 1:
        logger.warning(f"⚠️ Collocation for {problem.name} exceeded {MAX_NODES} nodes at tol {tol:.0e}; "
                       f"retrying at {10.0 * tol:.0e}")
        tol *= 10.0
        fine = collocate(tol)
    loose = collocate(10.0 * tol)
    for result, label in ((fine, tol), (loose, 10.0 * tol)):
        if result.status != 0:
            raise ReferenceNotConverged(f"collocation for {problem.name} failed (tol {label:.0e}): {result.message}")
    samples = np.linspace(0.0, problem.T, 2001)
    difference = np.abs(fine.sol(samples) - loose.sol(samples))
    m = problem.m
    components = {"y": float(np.max(difference[:m])), "p": float(np.max(difference[m:]))}
    discrepancy = max(components.values())
    logger.info(f"✅ Collocation reference for {problem.name}: {fine.x.size} nodes, "
                f"max residual {np.max(fine.rms_residuals):.2e}, discrepancy {discrepancy:.2e}")

    def evaluate(t):
        z = fine.sol(t)
        return z[:m].T, z[m:].T

    return ReferenceSolution(problem.name, "collocation", n_ref, evaluate, discrepancy, components)


def reference_solution(problem: BVProblem, n_ref: int, backend: Optional[str] = None,
                       use_cache: bool = True) -> ReferenceSolution:
    """
    Build (or fetch from the result cache) a dense reference solution

    Args:
        problem: boundary value problem
        n_ref: fine grid size of the discrete backend and mesh hint for collocation
        backend: "collocation" or "kkt", defaults to PEER_REFERENCE_BACKEND

    Raises:
        ReferenceNotConverged: the backend failed to produce a solution
    """
    backend = backend or get_settings().reference_backend
    if backend not in BACKENDS:
        raise ValueError(f"unknown reference backend {backend!r}; available: {', '.join(BACKENDS)}")
    if n_ref < 8:
        raise ValueError(f"n_ref must be >= 8, got {n_ref}")

    def build():
        logger.info(f"🔄 Building {backend} reference for {problem.name} (N_ref = {n_ref})")
        if backend == "kkt":
            return _kkt_reference(problem, n_ref)
        return _collocation_reference(problem, n_ref)

    if not use_cache:
        return build()
    key = ("reference", problem.name, problem.T, tuple(problem.y0), n_ref, backend)
    return get_cache_manager().get_or_compute(key, build)
