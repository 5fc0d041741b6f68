#!/usr/bin/env python3
"""
Stability Analysis Module
Zero-stability, A(alpha) angles from the root locus, scans of the Q = 0 curve,
transformed norms and the simplified-Newton contraction of full end matrices
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from errors import (
    DimensionMismatch,
    MissingAtilde,
    NotOnCurve,
    NotZeroStable,
    PeerError,
    SingularK,
)
from linalg_core import (
    eig_small,
    eig_small_batch,
    inverse,
    matrix_inf_norm,
    numeric_rank,
    solve_dense,
    spectral_radius,
)
from method_catalog import StageMatrixSet, q_gradient, q_polynomial
from order_analysis import synthesize_standard
from settings import get_settings

logger = logging.getLogger(__name__)

UNIT_UPPER = 1.0 + 1e-9
UNIT_LOWER = 1.0 - 1e-8
RANK_TOL = 1e-8
CLUSTER_TOL = 1e-6
ZERO_Z_TOL = 1e-12

PROJECTION_STEPS = 50
PROJECTION_CLIP = 0.2
PROJECTION_TARGET = 1e-13
CURVE_TOL = 1e-10
DEDUP_DISTANCE = 1e-6
LOCUS_REPORT_SAMPLES = 200


def stability_matrix(matrices: StageMatrixSet, z: complex) -> np.ndarray:
    """
    M(z) = (A - z K)^{-1} B

    Raises SingularMatrix when z is a pole.
    """
    shifted = matrices.A.astype(np.complex128) - complex(z) * np.diag(matrices.K)
    return solve_dense(shifted, matrices.B.astype(np.complex128))


def _eigenvalues(matrix: np.ndarray) -> np.ndarray:
    if matrix.shape[0] <= 4:
        return eig_small(matrix)
    return np.linalg.eigvals(matrix)


def _batch_eigenvalues(stack: np.ndarray) -> np.ndarray:
    if stack.shape[-1] <= 4:
        return eig_small_batch(stack)
    return np.linalg.eigvals(stack)


def zero_stability(matrices: StageMatrixSet) -> Tuple[bool, Dict]:
    """
    Check boundedness of M(0)^n

    Returns:
        (flag, diagnostics) with eigenvalues, spectral radius and, for each
        eigenvalue on the unit circle, its algebraic and geometric multiplicity
    """
    m0 = solve_dense(matrices.A, matrices.B)
    n = m0.shape[0]
    eigenvalues = _eigenvalues(m0)
    radius = float(np.max(np.abs(eigenvalues)))

    unit_checks = []
    semisimple = True
    for value in eigenvalues:
        modulus = abs(value)
        if modulus < UNIT_LOWER or modulus > UNIT_UPPER:
            continue
        algebraic = int(np.sum(np.abs(eigenvalues - value) <= CLUSTER_TOL))
        geometric = n - numeric_rank(m0 - value * np.eye(n), RANK_TOL)
        ok = algebraic == geometric
        semisimple = semisimple and ok
        unit_checks.append({
            "eigenvalue": [float(value.real), float(value.imag)],
            "algebraic": algebraic,
            "geometric": geometric,
            "semisimple": ok,
        })

    stable = radius <= UNIT_UPPER and semisimple
    diagnostics = {
        "eigenvalues": [[float(v.real), float(v.imag)] for v in eigenvalues],
        "spectral_radius": radius,
        "unit_eigenvalues": unit_checks,
        "unit_eigen_semisimple": semisimple,
    }
    return stable, diagnostics


def root_locus(matrices: StageMatrixSet, n_theta: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenvalues z of K^{-1}(A - e^{-i theta} B) for theta on a uniform grid of (0, 2 pi)

    Returns:
        (thetas of shape (n_theta - 1,), z of shape (n_theta - 1, s))
    """
    n_theta = n_theta or get_settings().ntheta
    if np.any(np.abs(matrices.K) <= 1e-14 * max(1.0, float(np.max(np.abs(matrices.K))))):
        raise SingularK(f"K = {matrices.K.tolist()} has a zero diagonal entry")

    thetas = 2.0 * np.pi * np.arange(1, n_theta) / n_theta
    k_inv = 1.0 / matrices.K
    lam_inv = np.exp(-1j * thetas)
    stack = (matrices.A[np.newaxis] - lam_inv[:, None, None] * matrices.B[np.newaxis]) * k_inv[None, :, None]
    return thetas, _batch_eigenvalues(stack)


def _angle_from_locus(z: np.ndarray) -> float:
    z = z.ravel()
    scale = max(1.0, float(np.max(np.abs(z))))
    nonzero = z[np.abs(z) > ZERO_Z_TOL * scale]
    if nonzero.size == 0:
        return 90.0
    arguments = np.degrees(np.abs(np.angle(nonzero)))
    return float(np.clip(np.min(180.0 - arguments), 0.0, 90.0))


def alpha_angle(matrices: StageMatrixSet, n_theta: Optional[int] = None) -> float:
    """
    A(alpha) angle in degrees from the sampled root locus

    Raises:
        NotZeroStable: M(0) powers unbounded
        SingularK: K has a zero diagonal entry
    """
    stable, diagnostics = zero_stability(matrices)
    if not stable:
        raise NotZeroStable(f"spectral radius of M(0) is {diagnostics['spectral_radius']:.6g}")
    _, z = root_locus(matrices, n_theta)
    return _angle_from_locus(z)


def jordan_basis_bdf3() -> np.ndarray:
    """Real matrix X_1 transforming A^{-1}B of BDF3 to real Jordan form"""
    return np.array([
        [1.0 / 3.0, 41.0 / 42.0, -1.0 / 12.0],
        [1.0 / 3.0, 1.0 / 3.0, 11.0 / 42.0],
        [1.0 / 3.0, 8.0 / 231.0, 2.0 / 11.0],
    ])


def transformed_norm(matrices: StageMatrixSet, X: np.ndarray, which: str = "forward") -> float:
    """
    ||X^{-1} A^{-1} B X||_inf (forward) or ||X^{-1} (B A^{-1})^T X||_inf (adjoint)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (matrices.s, matrices.s):
        raise DimensionMismatch(f"X has shape {X.shape}, expected {(matrices.s, matrices.s)}")
    x_inv = inverse(X)
    if which == "forward":
        propagator = solve_dense(matrices.A, matrices.B)
    elif which == "adjoint":
        propagator = solve_dense(matrices.A.T, matrices.B.T)
    else:
        raise ValueError(f"which must be 'forward' or 'adjoint', got {which!r}")
    return matrix_inf_norm(x_inv @ propagator @ X)


class StabilityReport(BaseModel):
    method: str
    role: str
    zero_stable: bool
    unit_eigen_semisimple: bool
    spectral_radius: float
    alpha_degrees: Optional[float] = None
    locus_samples: List[Tuple[float, List[Tuple[float, float]]]] = []
    norm_bound_X1: Optional[float] = None


def stability_report(matrices: StageMatrixSet, method: str = "", n_theta: Optional[int] = None) -> StabilityReport:
    """Zero-stability, alpha with a thinned locus, and the X_1 norm for three-stage sets"""
    stable, diagnostics = zero_stability(matrices)
    alpha = None
    samples = []
    if stable and np.all(np.abs(matrices.K) > 0):
        thetas, z = root_locus(matrices, n_theta)
        alpha = _angle_from_locus(z)
        stride = max(1, len(thetas) // LOCUS_REPORT_SAMPLES)
        for theta, values in zip(thetas[::stride], z[::stride]):
            samples.append((float(theta), [(float(v.real), float(v.imag)) for v in values]))

    norm = None
    if matrices.s == 3:
        norm = transformed_norm(matrices, jordan_basis_bdf3(), "forward")

    return StabilityReport(
        method=method,
        role=matrices.role,
        zero_stable=stable,
        unit_eigen_semisimple=diagnostics["unit_eigen_semisimple"],
        spectral_radius=diagnostics["spectral_radius"],
        alpha_degrees=alpha,
        locus_samples=samples,
        norm_bound_X1=norm,
    )


# ---------------------------------------------------------------------------
# Simplified Newton contraction for full end matrices
# ---------------------------------------------------------------------------

def _atilde(end_set: StageMatrixSet) -> np.ndarray:
    if end_set.Atilde is None:
        raise MissingAtilde(f"{end_set.role} set has no Atilde")
    return end_set.Atilde


def contraction_matrix(end_set: StageMatrixSet, z: complex) -> np.ndarray:
    """S(z) = (Atilde - z K)^{-1}(Atilde - A)"""
    atilde = _atilde(end_set)
    shifted = atilde.astype(np.complex128) - complex(z) * np.diag(end_set.K)
    return solve_dense(shifted, (atilde - end_set.A).astype(np.complex128))


def contraction_radius(end_set: StageMatrixSet, z: complex) -> float:
    return spectral_radius(contraction_matrix(end_set, z))


def adjoint_contraction_matrix(end_set: StageMatrixSet, zeta: float) -> np.ndarray:
    """(Atilde^T + zeta K)^{-1}(Atilde - A)^T; same spectrum as S(-zeta)"""
    atilde = _atilde(end_set)
    return solve_dense(atilde.T + zeta * np.diag(end_set.K), (atilde - end_set.A).T)


# ---------------------------------------------------------------------------
# Q-curve scans
# ---------------------------------------------------------------------------

def project_to_curve(d1: float, d3: float) -> Tuple[float, float, float]:
    """
    Newton projection of (d1, d3) onto Q = 0 along the gradient

    Steps are clipped to length 0.2.

    Returns:
        (d1, d3, Q) at the projected point

    Raises:
        NotOnCurve: |Q| stays above 1e-10 after the step budget
    """
    x = np.array([d1, d3], dtype=np.float64)
    value = float(q_polynomial(*x))
    for _ in range(PROJECTION_STEPS):
        if abs(value) <= PROJECTION_TARGET:
            break
        gradient = np.array(q_gradient(*x))
        norm_sq = float(gradient @ gradient)
        if norm_sq == 0.0:
            break
        step = -value * gradient / norm_sq
        length = float(np.linalg.norm(step))
        if length > PROJECTION_CLIP:
            step *= PROJECTION_CLIP / length
        x = x + step
        value = float(q_polynomial(*x))
        if length < 1e-16:
            break
    if not math.isfinite(value) or abs(value) > CURVE_TOL:
        raise NotOnCurve(float(x[0]), float(x[1]), abs(value))
    return float(x[0]), float(x[1]), value


class ScanBox(BaseModel):
    """Rectangle in the (d1, d3) plane, optionally cut by d1 + d3 <= max_sum"""

    d1_min: float
    d1_max: float
    d3_min: float
    d3_max: float
    max_sum: Optional[float] = None

    def contains(self, d1: float, d3: float) -> bool:
        inside = self.d1_min <= d1 <= self.d1_max and self.d3_min <= d3 <= self.d3_max
        if self.max_sum is not None:
            inside = inside and d1 + d3 <= self.max_sum
        return inside


SCAN_BOXES: Dict[str, ScanBox] = {
    "simplex": ScanBox(d1_min=0.0, d1_max=1.0, d3_min=0.0, d3_max=1.0, max_sum=1.0),
    "unit": ScanBox(d1_min=0.0, d1_max=1.0, d3_min=0.0, d3_max=1.0),
    "wide": ScanBox(d1_min=-1.0, d1_max=2.0, d3_min=-1.0, d3_max=2.0),
    "far": ScanBox(d1_min=-3.0, d1_max=4.0, d3_min=-3.0, d3_max=4.0),
}


class ScanRecord(BaseModel):
    d1: float
    d3: float
    q_residual: float
    zero_stable: bool
    alpha_degrees: Optional[float] = None


class ScanResult(BaseModel):
    records: List[ScanRecord]
    box: ScanBox
    n_seeds: int
    rng_seed: int
    n_theta: int

    def best(self) -> Optional[ScanRecord]:
        """Record with the largest angle among zero-stable points"""
        candidates = [r for r in self.records if r.alpha_degrees is not None]
        if not candidates:
            return None
        return max(candidates, key=lambda r: r.alpha_degrees)


def _scan_point(seed: Tuple[float, float], box: ScanBox, n_theta: int) -> Optional[ScanRecord]:
    try:
        d1, d3, value = project_to_curve(*seed)
    except NotOnCurve:
        return None
    if not box.contains(d1, d3):
        return None
    try:
        synthesis = synthesize_standard(d1, d3)
    except PeerError as e:
        logger.debug(f"Synthesis failed at ({d1:.6g}, {d3:.6g}): {e}")
        return None
    if not synthesis.success:
        return None

    matrices = synthesis.matrices
    try:
        stable, _ = zero_stability(matrices)
    except PeerError:
        return None
    alpha = None
    if stable:
        try:
            alpha = alpha_angle(matrices, n_theta)
        except PeerError as e:
            logger.debug(f"No angle at ({d1:.6g}, {d3:.6g}): {e}")
    return ScanRecord(d1=d1, d3=d3, q_residual=abs(value), zero_stable=stable, alpha_degrees=alpha)


def _deduplicate(records: List[ScanRecord]) -> List[ScanRecord]:
    records = sorted(records, key=lambda r: (r.d1, r.d3))
    kept: List[ScanRecord] = []
    for record in records:
        duplicate = False
        for previous in reversed(kept):
            if record.d1 - previous.d1 > DEDUP_DISTANCE:
                break
            if math.hypot(record.d1 - previous.d1, record.d3 - previous.d3) <= DEDUP_DISTANCE:
                duplicate = True
                break
        if not duplicate:
            kept.append(record)
    return kept


def scan_q_curve(box: ScanBox, n_seeds: int, rng_seed: int = 0, n_theta: Optional[int] = None,
                 workers: Optional[int] = None) -> ScanResult:
    """
    Random multistart scan of the Q = 0 curve

    Seeds are drawn uniformly in the box's rectangle, projected onto the curve,
    synthesized and analysed concurrently; the merged records are sorted by
    (d1, d3) and points closer than 1e-6 are merged.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    settings = get_settings()
    n_theta = n_theta or settings.ntheta
    workers = workers or settings.scan_workers

    rng = np.random.default_rng(rng_seed)
    seeds = np.column_stack([
        rng.uniform(box.d1_min, box.d1_max, n_seeds),
        rng.uniform(box.d3_min, box.d3_max, n_seeds),
    ])

    logger.info(f"🔄 Scanning Q = 0 with {n_seeds} seeds on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda seed: _scan_point(tuple(seed), box, n_theta), seeds))

    records = _deduplicate([r for r in results if r is not None])
    result = ScanResult(records=records, box=box, n_seeds=n_seeds, rng_seed=rng_seed, n_theta=n_theta)
    best = result.best()
    if best is not None:
        logger.info(f"✅ Scan finished: {len(records)} curve points, max alpha {best.alpha_degrees:.3f} "
                    f"at ({best.d1:.4f}, {best.d3:.4f})")
    else:
        logger.info(f"⚠️ Scan finished: {len(records)} curve points, none zero-stable")
    return result
