#!/usr/bin/env python3
"""
KKT Solver Module
Coupled forward and discrete adjoint Peer schemes for an eliminated boundary
value problem

Grid: h = T / (N + 1), stage Y[n, i] approximates y((n + c_i) h) for n = 0..N and
y_h(T) = (w^T x I) Y[N]. Arrays are laid out (N + 1, s, m).

Forward:  A_n Y_n = B_n Y_{n-1} + h K_n G(Y_n, P_n),             n = 1..N
          A_0 Y_0 = a x y0 + h b x g(y0, p_h(0)) + h K_0 G(Y_0, P_0)
Adjoint:  A_n^T P_n = B_{n+1}^T P_{n+1} - h K_n Phi(Y_n, P_n),    n = 0..N-1
          A_N^T P_N = w x p_h(T) - h K_N Phi(Y_N, P_N)
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from pydantic import BaseModel

from errors import (
    DimensionMismatch,
    InvalidGrid,
    NewtonDivergence,
    NoConvergence,
    NonFiniteValue,
    SingularMatrix,
    SingularStageJacobian,
)
from linalg_core import solve_dense
from method_catalog import PeerMethodSuite, StageMatrixSet
from problems import BVProblem
from settings import get_settings

logger = logging.getLogger(__name__)

STAGE_TOL = 1e-13
STAGE_FLOOR = 1e-10
MAX_HALVINGS = 20
DIVERGENCE_FACTOR = 1e6

InitialGuess = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _default(value, fallback):
    return fallback if value is None else value


@dataclass(frozen=True)
class Grid:
    """Constant step grid with N + 1 stage blocks on [0, T]"""

    T: float
    N: int
    c: np.ndarray

    def __post_init__(self):
        if self.N < 2:
            raise InvalidGrid(f"N must be >= 2, got {self.N}")
        if not self.T > 0:
            raise InvalidGrid(f"T must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / (self.N + 1)

    @property
    def stage_times(self) -> np.ndarray:
        """(N + 1, s) array of (n + c_i) h"""
        return (np.arange(self.N + 1)[:, None] + np.asarray(self.c)[None, :]) * self.h


@dataclass
class KKTOptions:
    """Per-call overrides of the solver settings"""

    tol: Optional[float] = None
    residual_tol: Optional[float] = None
    max_sweeps: Optional[int] = None
    stall_window: Optional[int] = None
    stall_ratio: Optional[float] = None
    max_newton: Optional[int] = None
    strategy: str = "auto"
    initial_guess: Optional[InitialGuess] = None

    def resolved(self) -> "KKTOptions":
        settings = get_settings()
        if self.strategy not in ("auto", "sweeps", "newton"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        return KKTOptions(
            tol=_default(self.tol, settings.kkt_tol),
            residual_tol=_default(self.residual_tol, settings.kkt_residual_tol),
            max_sweeps=_default(self.max_sweeps, settings.max_sweeps),
            stall_window=_default(self.stall_window, settings.stall_window),
            stall_ratio=_default(self.stall_ratio, settings.stall_ratio),
            max_newton=_default(self.max_newton, settings.max_newton),
            strategy=self.strategy,
            initial_guess=self.initial_guess,
        )


@dataclass
class DiscreteSolution:
    method: str
    problem: str
    grid: Grid
    Y: np.ndarray
    P: np.ndarray
    yh_T: np.ndarray
    ph_0: np.ndarray
    residual_norm: float
    strategy: str
    sweeps: int = 0
    newton_iterations: int = 0
    history: List[float] = field(default_factory=list)

    @property
    def stage_times(self) -> np.ndarray:
        return self.grid.stage_times

    @property
    def scale(self) -> float:
        return 1.0 + max(float(np.max(np.abs(self.Y))), float(np.max(np.abs(self.P))))


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def _stage_newton(residual: Callable[[np.ndarray], np.ndarray], jacobian: Callable[[np.ndarray], np.ndarray],
                  x0: np.ndarray, scale: float, max_iter: int) -> np.ndarray:
    """Damped Newton for one m-dimensional stage equation"""
    x = np.array(x0, dtype=np.float64)
    r = residual(x)
    norm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if norm <= STAGE_TOL * (scale + np.max(np.abs(x))):
            return x
        try:
            step = solve_dense(jacobian(x), r)
        except SingularMatrix as e:
            raise SingularStageJacobian(str(e))
        damping = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = x - damping * step
            try:
                r_candidate = residual(candidate)
                norm_candidate = float(np.max(np.abs(r_candidate)))
            except NonFiniteValue:
                norm_candidate = np.inf
            if norm_candidate < norm:
                break
            damping *= 0.5
        else:
            if norm <= STAGE_FLOOR * (scale + np.max(np.abs(x))):
                return x
            raise NewtonDivergence(f"stage Newton stalled at residual {norm:.3e}")
        x, r, norm = candidate, r_candidate, norm_candidate
    if norm <= STAGE_FLOOR * (scale + np.max(np.abs(x))):
        return x
    raise NewtonDivergence(f"stage Newton did not converge in {max_iter} iterations, residual {norm:.3e}")


def _block_stage_diagonal(blocks: np.ndarray) -> np.ndarray:
    """(s, m, m) stage blocks -> dense (s m, s m) block diagonal"""
    s, m, _ = blocks.shape
    return np.einsum("ikl,ij->ikjl", blocks, np.eye(s)).reshape(s * m, s * m)


def _simplified_newton(residual: Callable[[np.ndarray], np.ndarray], iteration_matrix: Callable[[np.ndarray], np.ndarray],
                       x0: np.ndarray, scale: float, max_iter: int) -> np.ndarray:
    """Simplified Newton on a full (s, m) block with an approximate iteration matrix"""
    x = np.array(x0, dtype=np.float64)
    r = residual(x)
    norm = float(np.max(np.abs(r)))
    history = [norm]
    for _ in range(max_iter):
        if norm <= STAGE_TOL * (scale + np.max(np.abs(x))):
            logger.debug(f"Simplified Newton residuals {history}")
            return x
        try:
            step = solve_dense(iteration_matrix(x), r.ravel()).reshape(x.shape)
        except SingularMatrix as e:
            raise SingularStageJacobian(str(e))
        x = x - step
        try:
            r = residual(x)
        except NonFiniteValue:
            raise NewtonDivergence("simplified Newton produced non-finite stages")
        norm = float(np.max(np.abs(r)))
        history.append(norm)
        if norm > DIVERGENCE_FACTOR * history[0] + STAGE_FLOOR:
            raise NewtonDivergence(f"simplified Newton diverged, residuals {history[-3:]}")
    if norm <= STAGE_FLOOR * (scale + np.max(np.abs(x))):
        return x
    raise NewtonDivergence(f"simplified Newton did not converge in {max_iter} iterations, residual {norm:.3e}")


def forward_step(matrices: StageMatrixSet, Y_prev: Optional[np.ndarray], P_n: np.ndarray, h: float,
                 problem: BVProblem, start_rhs: Optional[np.ndarray] = None,
                 guess: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solve A Y = rhs + h K G(Y, P_n) for one step with P_n frozen

    Args:
        matrices: coefficient set of this step
        Y_prev: previous stage block (ignored when start_rhs is given)
        P_n: adjoint stages of this step, (s, m)
        h: step size
        problem: boundary value problem
        start_rhs: a x y0 + h b x g(y0, p_h(0)) for the starting step
        guess: initial stage values, defaults to the right-hand side scaled by A's diagonal

    Returns:
        Y_n of shape (s, m)
    """
    rhs = start_rhs if start_rhs is not None else np.einsum("ij,jm->im", matrices.B, Y_prev)
    s, m = rhs.shape
    max_iter = get_settings().max_newton
    Y = np.array(guess if guess is not None else rhs / np.diag(matrices.A)[:, None], dtype=np.float64)

    if matrices.is_triangular:
        for i in range(s):
            r_i = rhs[i] - matrices.A[i, :i] @ Y[:i]
            a_ii, k_i = matrices.A[i, i], matrices.K[i]
            if k_i == 0.0:
                Y[i] = r_i / a_ii
                continue
            p_i = P_n[i]
            Y[i] = _stage_newton(
                lambda y: a_ii * y - h * k_i * problem.eval_g(y, p_i) - r_i,
                lambda y: a_ii * np.eye(m) - h * k_i * problem.jac_g_y(y, p_i),
                Y[i], 1.0 + float(np.max(np.abs(r_i))), max_iter,
            )
        return Y

    iteration_a = matrices.Atilde if matrices.Atilde is not None else matrices.A
    kron_a = np.kron(iteration_a, np.eye(m))

    def residual(Y_block):
        return matrices.A @ Y_block - rhs - h * matrices.K[:, None] * problem.eval_g(Y_block, P_n)

    def iteration_matrix(Y_block):
        return kron_a - h * _block_stage_diagonal(matrices.K[:, None, None] * problem.jac_g_y(Y_block, P_n))

    return _simplified_newton(residual, iteration_matrix, Y, 1.0 + float(np.max(np.abs(rhs))), max_iter)


def adjoint_step(matrices: StageMatrixSet, Y_n: np.ndarray, h: float, problem: BVProblem,
                 B_next: Optional[np.ndarray] = None, P_next: Optional[np.ndarray] = None,
                 terminal: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None,
                 guess: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solve A^T P + h K Phi(Y_n, P) = rhs for one step with Y_n frozen

    rhs is B_next^T P_next for n < N (B_next is the B of the following step) or
    w x terminal for the last step.

    Returns:
        P_n of shape (s, m)
    """
    if terminal is not None:
        rhs = np.outer(w, terminal)
    else:
        rhs = np.einsum("ji,jm->im", B_next, P_next)
    s, m = rhs.shape
    max_iter = get_settings().max_newton
    P = np.array(guess if guess is not None else rhs / np.diag(matrices.A)[:, None], dtype=np.float64)

    if matrices.is_triangular:
        A = matrices.A
        for i in reversed(range(s)):
            r_i = rhs[i] - A[i + 1:, i] @ P[i + 1:]
            a_ii, k_i = A[i, i], matrices.K[i]
            if k_i == 0.0:
                P[i] = r_i / a_ii
                continue
            y_i = Y_n[i]
            P[i] = _stage_newton(
                lambda p: a_ii * p + h * k_i * problem.eval_phi(y_i, p) - r_i,
                lambda p: a_ii * np.eye(m) + h * k_i * problem.jac_phi_p(y_i, p),
                P[i], 1.0 + float(np.max(np.abs(r_i))), max_iter,
            )
        return P

    iteration_a = matrices.Atilde if matrices.Atilde is not None else matrices.A
    kron_at = np.kron(iteration_a.T, np.eye(m))

    def residual(P_block):
        return matrices.A.T @ P_block + h * matrices.K[:, None] * problem.eval_phi(Y_n, P_block) - rhs

    def iteration_matrix(P_block):
        return kron_at + h * _block_stage_diagonal(matrices.K[:, None, None] * problem.jac_phi_p(Y_n, P_block))

    return _simplified_newton(residual, iteration_matrix, P, 1.0 + float(np.max(np.abs(rhs))), max_iter)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _start_rhs(suite: PeerMethodSuite, problem: BVProblem, h: float, P0: np.ndarray) -> np.ndarray:
    ph_0 = suite.v @ P0
    return np.outer(suite.a, problem.y0) + h * np.outer(suite.b, problem.eval_g(problem.y0, ph_0))


def forward_sweep(suite: PeerMethodSuite, problem: BVProblem, grid: Grid, P: np.ndarray,
                  Y_guess: Optional[np.ndarray] = None) -> np.ndarray:
    """Forward scheme n = 0..N with the adjoint stages frozen"""
    N, h = grid.N, grid.h
    Y = np.empty_like(P)
    guess = (lambda n: None) if Y_guess is None else (lambda n: Y_guess[n])
    Y[0] = forward_step(suite.start, None, P[0], h, problem, start_rhs=_start_rhs(suite, problem, h, P[0]),
                        guess=guess(0))
    for n in range(1, N + 1):
        matrices = suite.end if n == N else suite.standard
        Y[n] = forward_step(matrices, Y[n - 1], P[n], h, problem, guess=guess(n))
    return Y


def backward_sweep(suite: PeerMethodSuite, problem: BVProblem, grid: Grid, Y: np.ndarray,
                   P_guess: Optional[np.ndarray] = None) -> np.ndarray:
    """Adjoint scheme n = N..0 with the forward stages frozen"""
    N, h = grid.N, grid.h
    P = np.empty_like(Y)
    guess = (lambda n: None) if P_guess is None else (lambda n: P_guess[n])
    p_T = problem.terminal_p(suite.w @ Y[N])
    P[N] = adjoint_step(suite.end, Y[N], h, problem, terminal=p_T, w=suite.w, guess=guess(N))
    for n in range(N - 1, -1, -1):
        matrices = suite.start if n == 0 else suite.standard
        B_next = suite.end.B if n + 1 == N else suite.standard.B
        P[n] = adjoint_step(matrices, Y[n], h, problem, B_next=B_next, P_next=P[n + 1], guess=guess(n))
    return P


def forward_integrate(suite: PeerMethodSuite, problem: BVProblem, N: int,
                      P: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Standalone forward integration with frozen adjoint stages (zero by default)

    Returns:
        Y of shape (N + 1, s, m)
    """
    grid = Grid(problem.T, N, suite.c)
    if P is None:
        P = np.zeros((N + 1, suite.s, problem.m))
    return forward_sweep(suite, problem, grid, P)


# ---------------------------------------------------------------------------
# Full residual and its sparse Jacobian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Coefficients:
    """Per-step coefficient stacks; B_fwd[n] = B_n, B_adj[n] = B_{n+1}"""

    A: np.ndarray
    K: np.ndarray
    B_fwd: np.ndarray
    B_adj: np.ndarray


def _coefficients(suite: PeerMethodSuite, N: int) -> _Coefficients:
    s = suite.s
    A = np.empty((N + 1, s, s))
    K = np.empty((N + 1, s))
    A[0], K[0] = suite.start.A, suite.start.K
    A[1:N], K[1:N] = suite.standard.A, suite.standard.K
    A[N], K[N] = suite.end.A, suite.end.K

    B_fwd = np.zeros((N + 1, s, s))
    B_fwd[1:N] = suite.standard.B
    B_fwd[N] = suite.end.B
    B_adj = np.zeros((N + 1, s, s))
    B_adj[:N - 1] = suite.standard.B
    B_adj[N - 1] = suite.end.B
    return _Coefficients(A=A, K=K, B_fwd=B_fwd, B_adj=B_adj)


def _residual_blocks(suite: PeerMethodSuite, problem: BVProblem, grid: Grid, coefficients: _Coefficients,
                     Y: np.ndarray, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward and adjoint residuals, each (N + 1, s, m)"""
    h = grid.h
    K = coefficients.K[:, :, None]
    G = problem.eval_g(Y, P)
    Phi = problem.eval_phi(Y, P)

    Y_prev = np.concatenate([np.zeros_like(Y[:1]), Y[:-1]])
    forward = (np.einsum("nij,njm->nim", coefficients.A, Y)
               - np.einsum("nij,njm->nim", coefficients.B_fwd, Y_prev) - h * K * G)
    forward[0] -= _start_rhs(suite, problem, h, P[0])

    P_next = np.concatenate([P[1:], np.zeros_like(P[:1])])
    adjoint = (np.einsum("nji,njm->nim", coefficients.A, P)
               - np.einsum("nji,njm->nim", coefficients.B_adj, P_next) + h * K * Phi)
    adjoint[-1] -= np.outer(suite.w, problem.terminal_p(suite.w @ Y[-1]))
    return forward, adjoint


def _kron_identity(matrices: np.ndarray, m: int, transpose: bool = False) -> np.ndarray:
    """(k, s, s) -> (k, s m, s m) with each block matrix x I_m"""
    k, s, _ = matrices.shape
    pattern = "nji,kl->nikjl" if transpose else "nij,kl->nikjl"
    return np.einsum(pattern, matrices, np.eye(m)).reshape(k, s * m, s * m)


def _stage_blocks(jacobians: np.ndarray) -> np.ndarray:
    """(k, s, m, m) stage Jacobians -> (k, s m, s m) block diagonal per step"""
    k, s, m, _ = jacobians.shape
    return np.einsum("nikl,ij->nikjl", jacobians, np.eye(s)).reshape(k, s * m, s * m)


def _block_diagonal(blocks: np.ndarray, size: int, row_offset: int = 0, col_offset: int = 0) -> scipy.sparse.coo_matrix:
    """COO matrix with square blocks placed along a shifted block diagonal"""
    k, b, _ = blocks.shape
    local_rows, local_cols = np.meshgrid(np.arange(b), np.arange(b), indexing="ij")
    base = np.arange(k)[:, None, None] * b
    rows = (base + local_rows + row_offset).ravel()
    cols = (base + local_cols + col_offset).ravel()
    return scipy.sparse.coo_matrix((blocks.ravel(), (rows, cols)), shape=(size, size))


def _kkt_jacobian(suite: PeerMethodSuite, problem: BVProblem, grid: Grid, coefficients: _Coefficients,
                  Y: np.ndarray, P: np.ndarray) -> scipy.sparse.csc_matrix:
    N, h = grid.N, grid.h
    s, m = suite.s, problem.m
    b = s * m
    size = (N + 1) * b
    K = coefficients.K[:, :, None, None]

    g_y = _stage_blocks(K * problem.jac_g_y(Y, P))
    g_p = _stage_blocks(K * problem.jac_g_p(Y, P))
    phi_y = _stage_blocks(K * problem.jac_phi_y(Y, P))
    phi_p = _stage_blocks(K * problem.jac_phi_p(Y, P))

    forward_y = _kron_identity(coefficients.A, m) - h * g_y
    forward_p = -h * g_p
    ph_0 = suite.v @ P[0]
    forward_p[0] -= h * np.einsum("i,j,kl->ikjl", suite.b, suite.v,
                                  problem.jac_g_p(problem.y0, ph_0)).reshape(b, b)

    adjoint_p = _kron_identity(coefficients.A, m, transpose=True) + h * phi_p
    adjoint_y = h * phi_y
    terminal = problem.jac_terminal(suite.w @ Y[N])
    adjoint_y[N] -= np.einsum("i,j,kl->ikjl", suite.w, suite.w, terminal).reshape(b, b)

    d_forward_y = (_block_diagonal(forward_y, size)
                   + _block_diagonal(-_kron_identity(coefficients.B_fwd[1:], m), size, row_offset=b))
    d_forward_p = _block_diagonal(forward_p, size)
    d_adjoint_y = _block_diagonal(adjoint_y, size)
    d_adjoint_p = (_block_diagonal(adjoint_p, size)
                   + _block_diagonal(-_kron_identity(coefficients.B_adj[:N], m, transpose=True), size, col_offset=b))
    return scipy.sparse.bmat([[d_forward_y, d_forward_p], [d_adjoint_y, d_adjoint_p]], format="csc")


class KKTResidual(BaseModel):
    """Max-norm residual per equation group"""

    groups: Dict[str, float]
    scale: float

    @property
    def max(self) -> float:
        return max(self.groups.values())

    def within(self, tolerance: float) -> bool:
        return self.max <= tolerance * self.scale


def kkt_residual(suite: PeerMethodSuite, problem: BVProblem, solution: DiscreteSolution) -> KKTResidual:
    """
    Re-evaluate every discrete equation for a candidate solution

    Groups: start-forward, interior-forward, end-forward, interior-adjoint,
    end-adjoint and boundary (consistency of y_h(T), p_h(0) with the stages).
    """
    grid = solution.grid
    expected = (grid.N + 1, suite.s, problem.m)
    if solution.Y.shape != expected or solution.P.shape != expected:
        raise DimensionMismatch(f"stages have shapes {solution.Y.shape}, {solution.P.shape}; expected {expected}")

    forward, adjoint = _residual_blocks(suite, problem, grid, _coefficients(suite, grid.N), solution.Y, solution.P)
    boundary = max(
        float(np.max(np.abs(solution.yh_T - suite.w @ solution.Y[-1]))),
        float(np.max(np.abs(solution.ph_0 - suite.v @ solution.P[0]))),
    )
    groups = {
        "start-forward": float(np.max(np.abs(forward[0]))),
        "interior-forward": float(np.max(np.abs(forward[1:-1]))),
        "end-forward": float(np.max(np.abs(forward[-1]))),
        "interior-adjoint": float(np.max(np.abs(adjoint[:-1]))),
        "end-adjoint": float(np.max(np.abs(adjoint[-1]))),
        "boundary": boundary,
    }
    return KKTResidual(groups=groups, scale=solution.scale)


# ---------------------------------------------------------------------------
# Outer iterations
# ---------------------------------------------------------------------------

def _max_abs(*arrays: np.ndarray) -> float:
    return max(float(np.max(np.abs(a))) for a in arrays)


def _system_residual(suite, problem, grid, coefficients: _Coefficients, Y, P) -> float:
    """Max-norm of the coupled residual; inf where g or phi cannot be evaluated"""
    try:
        forward, adjoint = _residual_blocks(suite, problem, grid, coefficients, Y, P)
    except NonFiniteValue:
        return np.inf
    return _max_abs(forward, adjoint)


def _sweep_iteration(suite, problem, grid, Y, P, options: KKTOptions):
    """
    Alternating forward/backward sweeps

    On failure the iterate with the smallest coupled residual seen so far
    (the starting point included) is handed back.

    Returns:
        (Y, P, history, converged, reason)
    """
    coefficients = _coefficients(suite, grid.N)
    history: List[float] = []
    best = (_system_residual(suite, problem, grid, coefficients, Y, P), Y, P)

    def fallback(reason):
        logger.debug(f"Sweeps hand back the iterate with residual {best[0]:.3e}")
        return best[1], best[2], history, False, reason

    for sweep in range(options.max_sweeps):
        try:
            Y_new = forward_sweep(suite, problem, grid, P, Y)
            P_new = backward_sweep(suite, problem, grid, Y_new, P)
        except (NewtonDivergence, SingularStageJacobian, NonFiniteValue) as e:
            return fallback(f"step failure in sweep {sweep + 1}: {e}")

        update = _max_abs(Y_new - Y, P_new - P)
        Y, P = Y_new, P_new
        history.append(update)
        residual = _system_residual(suite, problem, grid, coefficients, Y, P)
        if residual < best[0]:
            best = (residual, Y, P)
        logger.debug(f"🔄 Sweep {sweep + 1}: update {update:.3e}, residual {residual:.3e}")

        scale = 1.0 + _max_abs(Y, P)
        if update <= options.tol * scale:
            return Y, P, history, True, "converged"
        if not np.isfinite(update) or update > DIVERGENCE_FACTOR * scale:
            return fallback(f"sweeps diverged (update {update:.3e})")
        window = options.stall_window
        if len(history) > window and history[-1] > options.stall_ratio ** window * history[-1 - window]:
            if history[-1] > history[0]:
                return fallback("sweep updates grow")
            return fallback(f"sweeps stalled (ratio above {options.stall_ratio} over {window} sweeps)")
    return fallback(f"no convergence in {options.max_sweeps} sweeps")


def _global_newton(suite, problem, grid, Y, P, options: KKTOptions):
    """
    Newton's method on the complete coupled system with a sparse direct solve
    and backtracking on the residual max-norm

    Returns:
        (Y, P, history)
    """
    coefficients = _coefficients(suite, grid.N)
    shape = Y.shape
    half = Y.size

    def split(z):
        return z[:half].reshape(shape), z[half:].reshape(shape)

    def residual(z):
        forward, adjoint = _residual_blocks(suite, problem, grid, coefficients, *split(z))
        return np.concatenate([forward.ravel(), adjoint.ravel()])

    z = np.concatenate([Y.ravel(), P.ravel()])
    F = residual(z)
    norm = float(np.max(np.abs(F)))
    history: List[float] = []

    for iteration in range(options.max_newton):
        scale = 1.0 + float(np.max(np.abs(z)))
        jacobian = _kkt_jacobian(suite, problem, grid, coefficients, *split(z))
        delta = scipy.sparse.linalg.spsolve(jacobian, F)
        if not np.all(np.isfinite(delta)):
            raise NoConvergence("global Newton: singular or ill-conditioned KKT Jacobian", history)

        damping = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = z - damping * delta
            try:
                F_candidate = residual(candidate)
                norm_candidate = float(np.max(np.abs(F_candidate)))
            except NonFiniteValue:
                norm_candidate = np.inf
            if norm_candidate < norm or norm_candidate <= options.residual_tol * scale:
                break
            damping *= 0.5
        else:
            if norm <= options.residual_tol * scale:
                return (*split(z), history)
            raise NoConvergence(f"global Newton: line search failed at residual {norm:.3e}", history)

        update = damping * float(np.max(np.abs(delta)))
        z, F, norm = candidate, F_candidate, norm_candidate
        history.append(update)
        logger.debug(f"🔄 Newton {iteration + 1}: update {update:.3e}, residual {norm:.3e}, damping {damping:g}")

        scale = 1.0 + float(np.max(np.abs(z)))
        if update <= options.tol * scale and norm <= options.residual_tol * scale:
            return (*split(z), history)

    raise NoConvergence(f"global Newton did not converge in {options.max_newton} iterations "
                        f"(residual {norm:.3e})", history)


def _initial_guess(suite, problem, grid, options: KKTOptions) -> Tuple[np.ndarray, np.ndarray]:
    shape = (grid.N + 1, suite.s, problem.m)
    if options.initial_guess is not None:
        times = grid.stage_times.ravel()
        y, p = options.initial_guess(times)
        return np.asarray(y, dtype=np.float64).reshape(shape), np.asarray(p, dtype=np.float64).reshape(shape)

    P = np.zeros(shape)
    try:
        Y = forward_sweep(suite, problem, grid, P)
    except (NewtonDivergence, SingularStageJacobian, NonFiniteValue) as e:
        logger.warning(f"⚠️ Forward sweep for the initial guess failed ({e}); using constant y0")
        Y = np.broadcast_to(problem.y0, shape).copy()
    return Y, P


def solve_kkt(suite: PeerMethodSuite, problem: BVProblem, N: int,
              options: Optional[KKTOptions] = None) -> DiscreteSolution:
    """
    Solve the coupled forward/adjoint discrete system

    Alternating sweeps are tried first (strategy "auto"); on stall, divergence or
    a failed stage solve the global Newton iteration takes over from the sweep
    iterate with the smallest coupled residual, the initial guess included.

    Args:
        suite: Peer method suite
        problem: eliminated boundary value problem
        N: number of steps, grid h = T / (N + 1)
        options: overrides of the solver settings

    Returns:
        DiscreteSolution whose full residual is below residual_tol * (1 + |Z|)

    Raises:
        NoConvergence: neither iteration reached the tolerances
    """
    options = (options or KKTOptions()).resolved()
    grid = Grid(problem.T, N, suite.c)
    Y, P = _initial_guess(suite, problem, grid, options)

    history: List[float] = []
    sweeps = 0
    newton_iterations = 0
    strategy = options.strategy
    converged = False

    if options.strategy in ("auto", "sweeps"):
        Y, P, history, converged, reason = _sweep_iteration(suite, problem, grid, Y, P, options)
        sweeps = len(history)
        if converged:
            strategy = "sweeps"
        elif options.strategy == "sweeps":
            raise NoConvergence(f"{suite.name} on {problem.name}, N = {N}: {reason}", history)
        else:
            logger.warning(f"⚠️ {suite.name} on {problem.name}, N = {N}: {reason}; switching to global Newton")

    if not converged:
        Y, P, newton_history = _global_newton(suite, problem, grid, Y, P, options)
        history = history + newton_history
        newton_iterations = len(newton_history)
        strategy = "newton" if options.strategy == "newton" else "sweeps+newton"

    solution = DiscreteSolution(
        method=suite.name, problem=problem.name, grid=grid, Y=Y, P=P,
        yh_T=suite.w @ Y[-1], ph_0=suite.v @ P[0], residual_norm=0.0, strategy=strategy,
        sweeps=sweeps, newton_iterations=newton_iterations, history=history,
    )
    check = kkt_residual(suite, problem, solution)
    solution.residual_norm = check.max

    if not check.within(options.residual_tol) and newton_iterations == 0:
        logger.warning(f"⚠️ Sweep fixed point leaves residual {check.max:.3e}; polishing with global Newton")
        Y, P, newton_history = _global_newton(suite, problem, grid, Y, P, options)
        solution.Y, solution.P = Y, P
        solution.yh_T, solution.ph_0 = suite.w @ Y[-1], suite.v @ P[0]
        solution.history += newton_history
        solution.newton_iterations = len(newton_history)
        solution.strategy = "sweeps+newton"
        check = kkt_residual(suite, problem, solution)
        solution.residual_norm = check.max

    if not check.within(options.residual_tol):
        raise NoConvergence(f"final KKT residual {check.max:.3e} above {options.residual_tol:.0e} * {check.scale:.3g}",
                            solution.history)

    logger.info(f"✅ {suite.name} on {problem.name}, N = {N}: {solution.strategy} "
                f"({sweeps} sweeps, {solution.newton_iterations} Newton), residual {check.max:.2e}")
    return solution
