#!/usr/bin/env python3
"""
Benchmark Problems
Boundary value problems y' = g(y, p), p' = phi(y, p), y(0) = y0, p(T) = terminal_p(y(T))
obtained by eliminating the control from the optimality system

All callables are vectorized: y and p have shape (..., m) and Jacobians
(..., m, m).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from errors import NonFiniteValue, NonpositiveEpsilon, UnknownProblem
from settings import get_settings

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                               step: Optional[float] = None) -> np.ndarray:
    """
    Central differences of a vectorized map (..., m) -> (..., k)

    Returns:
        array (..., k, m); the step per component is step * (1 + |x_j|)
    """
    step = step or get_settings().fd_step
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1]
    columns = []
    for j in range(m):
        delta = step * (1.0 + np.abs(x[..., j]))
        shift = np.zeros_like(x)
        shift[..., j] = delta
        columns.append((func(x + shift) - func(x - shift)) / (2.0 * delta[..., None]))
    return np.stack(columns, axis=-1)


@dataclass(frozen=True)
class BVProblem:
    """Eliminated two-point boundary value problem with optional analytic Jacobians"""

    name: str
    m: int
    T: float
    y0: np.ndarray
    g: VectorField
    phi: VectorField
    terminal_p: Callable[[np.ndarray], np.ndarray]
    g_y: Optional[VectorField] = None
    g_p: Optional[VectorField] = None
    phi_y: Optional[VectorField] = None
    phi_p: Optional[VectorField] = None
    terminal_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def eval_g(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        return _finite("g", self.g(y, p))

    def eval_phi(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        return _finite("phi", self.phi(y, p))

    def jac_g_y(self, y, p):
        if self.g_y is not None:
            return self.g_y(y, p)
        return finite_difference_jacobian(lambda z: self.g(z, p), y)

    def jac_g_p(self, y, p):
        if self.g_p is not None:
            return self.g_p(y, p)
        return finite_difference_jacobian(lambda z: self.g(y, z), p)

    def jac_phi_y(self, y, p):
        if self.phi_y is not None:
            return self.phi_y(y, p)
        return finite_difference_jacobian(lambda z: self.phi(z, p), y)

    def jac_phi_p(self, y, p):
        if self.phi_p is not None:
            return self.phi_p(y, p)
        return finite_difference_jacobian(lambda z: self.phi(y, z), p)

    def jac_terminal(self, y_T: np.ndarray) -> np.ndarray:
        if self.terminal_jacobian is not None:
            return self.terminal_jacobian(y_T)
        return finite_difference_jacobian(self.terminal_p, y_T)


def _finite(label: str, values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{label} returned NaN or Inf")
    return values


def _zero_terminal(m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda y_T: np.zeros(np.shape(y_T)[:-1] + (m,))


def _zero_terminal_jacobian(m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda y_T: np.zeros(np.shape(y_T)[:-1] + (m, m))


def _matrix(*rows) -> np.ndarray:
    """Stack broadcast entries into (..., len(rows), len(rows[0]))"""
    shape = np.broadcast(*[entry for row in rows for entry in row]).shape
    return np.stack([np.stack([np.broadcast_to(e, shape) for e in row], axis=-1) for row in rows], axis=-2)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    problem: BVProblem
    description: str
    grids: List[int] = field(default_factory=list)
    reference_n: int = 2560


# ---------------------------------------------------------------------------
# Rayleigh (tunnel-diode oscillator)
# ---------------------------------------------------------------------------

def rayleigh() -> ProblemSpec:
    """
    Unconstrained Rayleigh problem on [0, 2.5] with y(0) = (-5, -5) and p(2.5) = 0

    Objective: integral of u^2 + y1^2; control eliminated as u = -2 p2.
    """
    def g(y, p):
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([y2, -y1 + y2 * (1.4 - 0.14 * y2 ** 2) - 8.0 * p[..., 1]], axis=-1)

    def phi(y, p):
        y1, y2 = y[..., 0], y[..., 1]
        p1, p2 = p[..., 0], p[..., 1]
        return np.stack([p2 - 2.0 * y1, -p1 - (1.4 - 0.42 * y2 ** 2) * p2], axis=-1)

    def g_y(y, p):
        y2 = y[..., 1]
        return _matrix((0.0, 1.0), (-1.0, 1.4 - 0.42 * y2 ** 2))

    def g_p(y, p):
        zero = np.zeros(y.shape[:-1])
        return _matrix((zero, 0.0), (0.0, -8.0))

    def phi_y(y, p):
        y2, p2 = y[..., 1], p[..., 1]
        return _matrix((-2.0, 0.0), (0.0, 0.84 * y2 * p2))

    def phi_p(y, p):
        y2 = y[..., 1]
        return _matrix((0.0, 1.0), (-1.0, -(1.4 - 0.42 * y2 ** 2)))

    problem = BVProblem(
        name="rayleigh", m=2, T=2.5, y0=np.array([-5.0, -5.0]),
        g=g, phi=phi, terminal_p=_zero_terminal(2),
        g_y=g_y, g_p=g_p, phi_y=phi_y, phi_p=phi_p, terminal_jacobian=_zero_terminal_jacobian(2),
    )
    return ProblemSpec(
        name="rayleigh",
        problem=problem,
        description="Rayleigh tunnel-diode oscillator, minimize int u^2 + y1^2 over [0, 2.5]",
        grids=[40, 80, 160, 320],
        reference_n=2560,
    )


# ---------------------------------------------------------------------------
# Van der Pol in Lienard coordinates
# ---------------------------------------------------------------------------

def van_der_pol(epsilon: float = 0.1) -> ProblemSpec:
    """
    Van der Pol oscillator on [0, 2], Lienard coordinates y2 = y, y1 = eps y' + y^3/3 - y

    Raises:
        NonpositiveEpsilon: epsilon <= 0
    """
    if not epsilon > 0:
        raise NonpositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    eps = float(epsilon)
    coupling = 2.0 / eps ** 2

    def lienard(y):
        return y[..., 0] + y[..., 1] - y[..., 1] ** 3 / 3.0

    def g(y, p):
        return np.stack([-y[..., 1] - 0.5 * p[..., 0], lienard(y) / eps], axis=-1)

    def phi(y, p):
        y2, p1, p2 = y[..., 1], p[..., 0], p[..., 1]
        r = lienard(y)
        damping = 1.0 - y2 ** 2
        return np.stack([
            -p2 / eps - coupling * r,
            p1 - damping * p2 / eps - coupling * r * damping - 2.0 * y2,
        ], axis=-1)

    def g_y(y, p):
        damping = 1.0 - y[..., 1] ** 2
        return _matrix((0.0, -1.0), (1.0 / eps, damping / eps))

    def g_p(y, p):
        zero = np.zeros(y.shape[:-1])
        return _matrix((zero - 0.5, 0.0), (0.0, 0.0))

    def phi_y(y, p):
        y2, p2 = y[..., 1], p[..., 1]
        r = lienard(y)
        damping = 1.0 - y2 ** 2
        return _matrix(
            (-coupling, -coupling * damping),
            (-coupling * damping, 2.0 * y2 * p2 / eps - coupling * (damping ** 2 - 2.0 * y2 * r) - 2.0),
        )

    def phi_p(y, p):
        damping = 1.0 - y[..., 1] ** 2
        return _matrix((0.0, -1.0 / eps), (1.0, -damping / eps))

    problem = BVProblem(
        name="van_der_pol", m=2, T=2.0, y0=np.array([2.0 * eps, 0.0]),
        g=g, phi=phi, terminal_p=_zero_terminal(2),
        g_y=g_y, g_p=g_p, phi_y=phi_y, phi_p=phi_p, terminal_jacobian=_zero_terminal_jacobian(2),
    )
    return ProblemSpec(
        name="van_der_pol",
        problem=problem,
        description=f"Van der Pol oscillator (eps = {eps:g}), minimize int u^2 + y^2 + y'^2 over [0, 2]",
        grids=[160, 320, 640, 1280],
        reference_n=2560,
    )


PROBLEMS: Dict[str, Callable[[], ProblemSpec]] = {
    "rayleigh": rayleigh,
    "van_der_pol": van_der_pol,
}


def get_problem(name: str) -> ProblemSpec:
    """Look up a registered problem by name ('vdp' is accepted for van_der_pol)"""
    key = "van_der_pol" if name in ("vdp", "vanderpol", "van-der-pol") else name
    if key not in PROBLEMS:
        raise UnknownProblem(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}")
    return PROBLEMS[key]()
