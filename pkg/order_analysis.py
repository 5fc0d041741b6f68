#!/usr/bin/env python3
"""
Order Analysis Module
Order conditions of the forward and adjoint Peer schemes, leading error terms,
Sylvester/symmetry identities and synthesis of standard methods on Q = 0
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import comb
from pydantic import BaseModel

from errors import (
    DegenerateNodes,
    InvariantViolation,
    MissingMatrix,
    NotOnCurve,
    UnsupportedQ,
)
from linalg_core import inverse, matrix_inf_norm
from method_catalog import Nodes, PeerMethodSuite, StageMatrixSet, q_polynomial
from settings import get_settings

logger = logging.getLogger(__name__)

CONDITION_KINDS = (
    "standard-forward",
    "standard-adjoint",
    "start-forward",
    "start-adjoint",
    "last-forward",
    "last-adjoint",
    "endpoint-adjoint",
    "endpoint-w",
    "interpolant-v",
)

FORWARD_KINDS = ("standard-forward", "standard-adjoint", "start-forward", "last-forward")

KAPPA2_GAUGE = 1.0 / 3.0
SYNTHESIS_TOL = 1e-10
SYNTHESIS_PLATEAU_TOL = 1e-8
SYNTHESIS_MAX_ITER = 200
NODE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Operator bundle
# ---------------------------------------------------------------------------

def vandermonde(c: np.ndarray, q: int) -> np.ndarray:
    """V_q(c) = (1, c, c^2, ..., c^{q-1}), s x q"""
    c = np.asarray(c, dtype=np.float64)
    return c[:, None] ** np.arange(q)[None, :]


def shift_matrix(q: int) -> np.ndarray:
    """Nilpotent E~_q with (i, i+1) entry i (1-based)"""
    e = np.zeros((q, q))
    for i in range(1, q):
        e[i - 1, i] = i
    return e


def shifted_pascal(q: int, zeta: float) -> np.ndarray:
    """P_q^zeta = exp(zeta E~_q), entries binom(j, i) zeta^(j - i)"""
    i, j = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
    powers = np.where(j >= i, float(zeta) ** np.maximum(j - i, 0), 0.0)
    return comb(j, i) * powers


@dataclass(frozen=True)
class OrderOperators:
    """Vandermonde, Pascal and shift matrices for nodes c and order q"""

    c: np.ndarray
    q: int
    V: np.ndarray = field(init=False)
    Vprime: np.ndarray = field(init=False)
    P: np.ndarray = field(init=False)
    Pinv: np.ndarray = field(init=False)
    E: np.ndarray = field(init=False)
    Delta: np.ndarray = field(init=False)
    Pi: np.ndarray = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        q = int(self.q)
        if q < 1:
            raise UnsupportedQ(f"q must be >= 1, got {q}")
        V = vandermonde(c, q)
        E = shift_matrix(q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "Vprime", V @ E)
        object.__setattr__(self, "P", scipy.linalg.pascal(q, kind="upper").astype(np.float64))
        object.__setattr__(self, "Pinv", scipy.linalg.invpascal(q, kind="upper").astype(np.float64))
        object.__setattr__(self, "Delta", np.diag((-1.0) ** np.arange(q)))
        object.__setattr__(self, "Pi", np.fliplr(np.eye(c.size)))

    def P_shift(self, zeta: float) -> np.ndarray:
        return shifted_pascal(self.q, zeta)


# ---------------------------------------------------------------------------
# Order conditions
# ---------------------------------------------------------------------------

def _require(matrix: Optional[np.ndarray], label: str) -> np.ndarray:
    if matrix is None:
        raise MissingMatrix(f"{label} is required for this condition")
    return matrix


def _max_q(kind: str, s: int) -> int:
    return s + 1 if kind in FORWARD_KINDS else s


def condition_residual(kind: str, suite: PeerMethodSuite, q: int) -> Tuple[np.ndarray, float]:
    """
    Residual of one order condition

    Args:
        kind: one of CONDITION_KINDS
        suite: method suite providing the matrices of that kind
        q: local order tested

    Returns:
        (residual matrix, max abs entry); s x q for matrix conditions, 1 x q for endpoint-w
        and interpolant-v
    """
    if kind not in CONDITION_KINDS:
        raise ValueError(f"unknown condition kind {kind!r}")
    s = suite.s
    if q < 1 or q > _max_q(kind, s):
        raise UnsupportedQ(f"{kind} supports 1 <= q <= {_max_q(kind, s)}, got {q}")

    ops = OrderOperators(suite.c, q)
    V, P, Pinv, E = ops.V, ops.P, ops.Pinv, ops.E
    std, start, end = suite.standard, suite.start, suite.end

    if kind == "standard-forward":
        B = _require(std.B, "standard B")
        residual = std.A @ V - B @ V @ Pinv - std.Kmat @ V @ E
    elif kind == "standard-adjoint":
        B = _require(std.B, "standard B")
        residual = std.A.T @ V - B.T @ V @ P + std.Kmat @ V @ E
    elif kind == "start-forward":
        unit = np.zeros((2, q))
        unit[0, 0] = 1.0
        if q > 1:
            unit[1, 1] = 1.0
        residual = start.A @ V - np.outer(suite.a, unit[0]) - np.outer(suite.b, unit[1]) - start.Kmat @ V @ E
    elif kind == "start-adjoint":
        B = _require(std.B, "standard B")
        residual = start.A.T @ V - B.T @ V @ P + start.Kmat @ V @ E
    elif kind == "last-forward":
        B = _require(end.B, "end B")
        residual = end.A @ V - B @ V @ Pinv - end.Kmat @ V @ E
    elif kind == "last-adjoint":
        B = _require(end.B, "end B")
        residual = std.A.T @ V - B.T @ V @ P + std.Kmat @ V @ E
    elif kind == "endpoint-adjoint":
        residual = end.A.T @ V - np.outer(suite.w, np.ones(q)) + end.Kmat @ V @ E
    elif kind == "endpoint-w":
        residual = (suite.w @ V - 1.0)[np.newaxis, :]
    else:
        target = np.zeros(q)
        target[0] = 1.0
        residual = (suite.v @ V - target)[np.newaxis, :]

    return residual, float(np.max(np.abs(residual)))


def required_order(kind: str, s: int) -> int:
    """Local order each condition must reach for the combined scheme to converge"""
    return {
        "standard-forward": s + 1,
        "standard-adjoint": s,
        "start-forward": s,
        "start-adjoint": s - 1,
        "last-forward": s,
        "last-adjoint": s - 1,
        "endpoint-adjoint": s - 1,
        "endpoint-w": s,
        "interpolant-v": s,
    }[kind]


class ConditionOrder(BaseModel):
    kind: str
    residuals: Dict[int, float]
    achieved: int
    required: int
    met: bool


class OrderReport(BaseModel):
    """Achieved local order per condition kind"""

    method: str
    tolerance: float
    conditions: List[ConditionOrder]
    leading_error: Optional[List[float]] = None

    @property
    def all_met(self) -> bool:
        return all(condition.met for condition in self.conditions)

    def condition(self, kind: str) -> ConditionOrder:
        for condition in self.conditions:
            if condition.kind == kind:
                return condition
        raise KeyError(kind)

    def unmet(self) -> List[str]:
        return [condition.kind for condition in self.conditions if not condition.met]


def achieved_orders(suite: PeerMethodSuite, tolerance: Optional[float] = None) -> OrderReport:
    """
    Evaluate every condition kind for q = 1 .. max and compare with the requirement

    The achieved order is the largest q such that all orders up to q pass.
    """
    tol = tolerance if tolerance is not None else get_settings().order_tol
    conditions = []
    for kind in CONDITION_KINDS:
        residuals = {}
        achieved = 0
        for q in range(1, _max_q(kind, suite.s) + 1):
            _, norm = condition_residual(kind, suite, q)
            residuals[q] = norm
            if norm <= tol and achieved == q - 1:
                achieved = q
        required = required_order(kind, suite.s)
        conditions.append(ConditionOrder(
            kind=kind, residuals=residuals, achieved=achieved, required=required, met=achieved >= required,
        ))

    q_standard = next(c.achieved for c in conditions if c.kind == "standard-forward")
    eta = leading_error(suite.standard, suite.nodes, max(q_standard, 1))
    report = OrderReport(method=suite.name, tolerance=tol, conditions=conditions, leading_error=eta.tolist())

    if report.all_met:
        logger.info(f"✅ {suite.name}: every order condition met")
    else:
        logger.info(f"⚠️ {suite.name}: unmet conditions {', '.join(report.unmet())}")
    return report


def leading_error(matrices: StageMatrixSet, nodes: Nodes, q: int) -> np.ndarray:
    """
    Leading forward error vector eta_{q+1} = A c^{q+1} - B (c-1)^{q+1} - (q+1) K c^q

    Args:
        matrices: set with A, B, K (normally the standard set)
        nodes: nodes of the method
        q: local order; the returned term belongs to degree q + 1
    """
    B = _require(matrices.B, f"{matrices.role} B")
    c = nodes.c
    return matrices.A @ c ** (q + 1) - B @ (c - 1.0) ** (q + 1) - (q + 1) * matrices.K * c ** q


# ---------------------------------------------------------------------------
# Sylvester and symmetry identities
# ---------------------------------------------------------------------------

def theta_e_operators(nodes: Nodes) -> Tuple[np.ndarray, np.ndarray]:
    """
    Extrapolation matrix Theta = V P V^{-1} and differentiation matrix E = V E~ V^{-1}

    Raises SingularMatrix for confluent nodes.
    """
    ops = OrderOperators(nodes.c, nodes.s)
    v_inv = inverse(ops.V)
    theta = ops.V @ ops.P @ v_inv
    differentiation = ops.V @ ops.E @ v_inv
    commutator = matrix_inf_norm(theta @ differentiation - differentiation @ theta)
    if commutator > 1e-10 * (1.0 + matrix_inf_norm(theta)) * (1.0 + matrix_inf_norm(differentiation)):
        logger.warning(f"⚠️ Theta and E commute only to {commutator:.3e}")
    return theta, differentiation


def sylvester_residual(A: np.ndarray, K: np.ndarray, nodes: Nodes, q1: int, q2: int) -> float:
    """
    Residual of the Sylvester-type relation between A and K implied by the forward
    order q1 and adjoint order q2 conditions; for q1 = q2 = s the congruent form
    with Theta and E is checked as well and the larger residual returned.
    """
    s = nodes.s
    if not (1 <= q1 <= s + 1 and 1 <= q2 <= s + 1):
        raise UnsupportedQ(f"q1, q2 must lie in 1..{s + 1}, got ({q1}, {q2})")
    A = np.asarray(A, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim == 1:
        K = np.diag(K)

    forward = OrderOperators(nodes.c, q1)
    adjoint = OrderOperators(nodes.c, q2)
    left_outer = (adjoint.V @ adjoint.P).T
    right_outer = forward.V @ forward.P

    lhs = left_outer @ A @ right_outer - adjoint.V.T @ A @ forward.V
    rhs = left_outer @ K @ right_outer @ forward.E + (adjoint.V @ adjoint.E).T @ K @ forward.V
    residual = float(np.max(np.abs(lhs - rhs)))

    if q1 == q2 == s:
        theta, diff = theta_e_operators(nodes)
        congruent = theta.T @ A @ theta - A - theta.T @ K @ theta @ diff - diff.T @ K
        residual = max(residual, float(np.max(np.abs(congruent))))
    return residual


def persymmetric_residual(matrices: StageMatrixSet) -> Tuple[float, float]:
    """(|Pi K^-1 A - A^T K^-1 Pi|, same for B); both vanish for Toeplitz BDF coefficients"""
    B = _require(matrices.B, f"{matrices.role} B")
    pi = np.fliplr(np.eye(matrices.s))
    k_inv = np.diag(1.0 / matrices.K)
    res_a = pi @ k_inv @ matrices.A - matrices.A.T @ k_inv @ pi
    res_b = pi @ k_inv @ B - B.T @ k_inv @ pi
    return float(np.max(np.abs(res_a))), float(np.max(np.abs(res_b)))


def pascal_congruence(q: int) -> np.ndarray:
    """Matrix of X -> P^T X P - X acting on column-stacked X"""
    P = scipy.linalg.pascal(q, kind="upper").astype(np.float64)
    return np.kron(P.T, P.T) - np.eye(q * q)


def pascal_sylvester_solve(M: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Least-squares W with P^T W P - W = P^T M P E~ + E~^T M

    The right-hand side is always in the range of the singular operator,
    so the returned residual is at rounding level.

    Returns:
        (W, max abs residual)
    """
    M = np.asarray(M, dtype=np.float64)
    q = M.shape[0]
    if M.shape != (q, q):
        raise UnsupportedQ(f"M must be square, got {M.shape}")
    P = scipy.linalg.pascal(q, kind="upper").astype(np.float64)
    E = shift_matrix(q)
    rhs = P.T @ M @ P @ E + E.T @ M

    operator = pascal_congruence(q)
    solution, *_ = scipy.linalg.lstsq(operator, rhs.ravel(order="F"))
    W = solution.reshape((q, q), order="F")
    residual = float(np.max(np.abs(P.T @ W @ P - W - rhs)))
    return W, residual


def lyapunov_kernel(q: int) -> List[np.ndarray]:
    """
    Basis of {X : X E~ + E~^T X = 0}

    One element per non-trivial anti-diagonal; normalized so that the largest
    entry has modulus one.
    """
    E = shift_matrix(q)
    identity = np.eye(q)
    operator = np.kron(E.T, identity) + np.kron(identity, E.T)
    basis = scipy.linalg.null_space(operator)
    kernel = []
    for column in basis.T:
        X = column.reshape((q, q), order="F")
        kernel.append(X / X.flat[np.argmax(np.abs(X))])
    return kernel


def kernel_determinant(d1: float, d3: float) -> float:
    """Determinant d1 d3 (d3 - d1) deciding whether the lower triangular kernel is trivial"""
    return d1 * d3 * (d3 - d1)


def _triangular_pascal_operator(c: np.ndarray) -> np.ndarray:
    """Columns: P_3(V^T X V) for each lower triangular unit X, column-stacked"""
    s = c.size
    V = vandermonde(c, s)
    P = scipy.linalg.pascal(s, kind="upper").astype(np.float64)
    columns = []
    for i, j in zip(*np.tril_indices(s)):
        X = np.zeros((s, s))
        X[i, j] = 1.0
        W = V.T @ X @ V
        columns.append((P.T @ W @ P - W).ravel(order="F"))
    return np.array(columns).T


def triangular_kernel(d1: float, d3: float) -> Optional[np.ndarray]:
    """
    Lower triangular kernel element of X -> P_3(V^T X V) for nodes (0, d1, d1 + d3)

    Returns:
        the kernel matrix normalized to unit diagonal when d1 = d3, else None
    """
    if abs(d1) <= NODE_TOL or abs(d3) <= NODE_TOL or abs(d1 + d3) <= NODE_TOL:
        raise DegenerateNodes(f"node differences must be nonzero, got ({d1}, {d3})")
    if abs(d1 - d3) > NODE_TOL:
        return None

    c = np.array([0.0, d1, d1 + d3])
    operator = _triangular_pascal_operator(c)
    basis = scipy.linalg.null_space(operator, rcond=1e-10)
    if basis.shape[1] == 0:
        return None

    X = np.zeros((3, 3))
    X[np.tril_indices(3)] = basis[:, -1]
    X = X / X[0, 0]
    check = float(np.max(np.abs(operator @ X[np.tril_indices(3)])))
    if check > 1e-10 * (1.0 + np.max(np.abs(operator))):
        raise InvariantViolation("kernel element", f"residual {check:.3e}")
    return X


# ---------------------------------------------------------------------------
# Synthesis on Q = 0
# ---------------------------------------------------------------------------

_BDF3_A = np.array([[11 / 6, 0.0, 0.0], [-3.0, 11 / 6, 0.0], [1.5, -3.0, 11 / 6]])
_BDF3_B = np.array([[1 / 3, -1.5, 3.0], [0.0, 1 / 3, -1.5], [0.0, 0.0, 1 / 3]])
_TRIL = np.tril_indices(3)


def _unpack(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.zeros((3, 3))
    A[_TRIL] = x[:6]
    B = x[6:15].reshape(3, 3)
    K = np.array([x[15], KAPPA2_GAUGE, x[16]])
    return A, B, K


def _pack(A: np.ndarray, B: np.ndarray, K: np.ndarray) -> np.ndarray:
    return np.concatenate([A[_TRIL], B.ravel(), [K[0], K[2]]])


def _synthesis_residual(x: np.ndarray, forward: OrderOperators, adjoint: OrderOperators) -> np.ndarray:
    A, B, K = _unpack(x)
    Kmat = np.diag(K)
    r_forward = A @ forward.V - B @ forward.V @ forward.Pinv - Kmat @ forward.V @ forward.E
    r_adjoint = A.T @ adjoint.V - B.T @ adjoint.V @ adjoint.P + Kmat @ adjoint.V @ adjoint.E
    return np.concatenate([r_forward.ravel(), r_adjoint.ravel()])


@dataclass
class SynthesisResult:
    """Outcome of solving the (4, 3) order conditions for given node differences"""

    d1: float
    d3: float
    nodes: Nodes
    matrices: Optional[StageMatrixSet]
    residual: float
    iterations: int
    nullity: int
    q_value: float
    k_signs: List[int] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.matrices is not None

    def to_dict(self) -> Dict:
        data = {
            "d1": self.d1,
            "d3": self.d3,
            "c": self.nodes.c.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "nullity": self.nullity,
            "q_value": self.q_value,
            "k_signs": self.k_signs,
            "success": self.success,
        }
        if self.matrices is not None:
            data["A"] = self.matrices.A.tolist()
            data["B"] = self.matrices.B.tolist()
            data["K"] = self.matrices.K.tolist()
        return data


def synthesize_standard(d1: float, d3: float) -> SynthesisResult:
    """
    Solve the forward (q1 = 4) and adjoint (q2 = 3) conditions for a lower triangular
    standard method on nodes c = (0, d1, d1 + d3)

    Damped Gauss-Newton least squares from the BDF3 coefficients with the gauge
    kappa_2 = 1/3. The equations are linear in (A, B, K), so the first full step
    already lands on the minimum-change solution.

    Returns:
        SynthesisResult; matrices is None when the residual ends between the
        success and plateau thresholds

    Raises:
        DegenerateNodes: d1, d3 or d1 + d3 vanish
        NotOnCurve: residual plateau above 1e-8
    """
    if abs(d1) <= NODE_TOL or abs(d3) <= NODE_TOL or abs(d1 + d3) <= NODE_TOL:
        raise DegenerateNodes(f"node differences must be nonzero, got ({d1}, {d3})")
    nodes = Nodes(np.array([0.0, d1, d1 + d3]))
    forward = OrderOperators(nodes.c, 4)
    adjoint = OrderOperators(nodes.c, 3)

    x = _pack(_BDF3_A, _BDF3_B, np.full(3, KAPPA2_GAUGE))
    r0 = _synthesis_residual(np.zeros_like(x), forward, adjoint)
    jacobian = np.empty((r0.size, x.size))
    for k in range(x.size):
        unit = np.zeros_like(x)
        unit[k] = 1.0
        jacobian[:, k] = _synthesis_residual(unit, forward, adjoint) - r0

    singular_values = scipy.linalg.svdvals(jacobian)
    rank = int(np.sum(singular_values > 1e-10 * singular_values[0]))
    nullity = x.size - rank

    residual = _synthesis_residual(x, forward, adjoint)
    norm = float(np.max(np.abs(residual)))
    history = [norm]
    iterations = 0
    while iterations < SYNTHESIS_MAX_ITER and norm > SYNTHESIS_TOL * max(1.0, np.max(np.abs(x))):
        step, *_ = scipy.linalg.lstsq(jacobian, residual)
        damping = 1.0
        while damping > 1e-10:
            candidate = x - damping * step
            candidate_residual = _synthesis_residual(candidate, forward, adjoint)
            candidate_norm = float(np.max(np.abs(candidate_residual)))
            if candidate_norm < norm:
                break
            damping *= 0.5
        else:
            break
        x, residual, norm = candidate, candidate_residual, candidate_norm
        history.append(norm)
        iterations += 1
        if len(history) > 10 and history[-1] > (1.0 - 1e-3) * history[-11]:
            break

    logger.debug(f"Synthesis at ({d1:.6g}, {d3:.6g}): residual history {history}")
    scale = max(1.0, float(np.max(np.abs(x))))
    q_value = float(q_polynomial(d1, d3))
    if norm > SYNTHESIS_PLATEAU_TOL * scale:
        raise NotOnCurve(d1, d3, norm)

    A, B, K = _unpack(x)
    k_signs = [int(np.sign(k)) if abs(k) > 1e-12 else 0 for k in K]
    matrices = None
    if norm <= SYNTHESIS_TOL * scale:
        matrices = StageMatrixSet(role="standard", A=A, B=B, K=K)
    else:
        logger.warning(f"⚠️ Synthesis at ({d1:.6g}, {d3:.6g}) stalled at residual {norm:.3e}")
    return SynthesisResult(
        d1=d1, d3=d3, nodes=nodes, matrices=matrices, residual=norm, iterations=iterations,
        nullity=nullity, q_value=q_value, k_signs=k_signs,
    )
