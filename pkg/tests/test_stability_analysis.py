import math

import numpy as np
import pytest

from errors import MissingAtilde, NotZeroStable, SingularK
from method_catalog import StageMatrixSet, builtin_suite, q_polynomial
from order_analysis import synthesize_standard
from stability_analysis import (
    SCAN_BOXES,
    ScanBox,
    adjoint_contraction_matrix,
    alpha_angle,
    contraction_matrix,
    contraction_radius,
    jordan_basis_bdf3,
    project_to_curve,
    root_locus,
    scan_q_curve,
    stability_matrix,
    stability_report,
    transformed_norm,
    zero_stability,
)
from linalg_core import spectral_radius


def test_bdf3_zero_stable_with_simple_unit_root():
    stable, diagnostics = zero_stability(builtin_suite("BDF3o32").standard)
    assert stable
    assert diagnostics["spectral_radius"] == pytest.approx(1.0, abs=1e-12)
    assert diagnostics["unit_eigen_semisimple"]
    assert len(diagnostics["unit_eigenvalues"]) == 1


def test_stability_matrix_at_zero_is_a_inverse_b():
    std = builtin_suite("BDF3o32").standard
    np.testing.assert_allclose(stability_matrix(std, 0.0), np.linalg.solve(std.A, std.B), atol=1e-14)


def test_bdf3_alpha():
    std = builtin_suite("BDF3o32").standard
    alpha = alpha_angle(std, 2000)
    assert alpha == pytest.approx(86.032, abs=0.05)
    assert abs(alpha_angle(std, 4000) - alpha) < 0.05


def test_equidistant_root_method_alpha():
    d = 0.25 + math.sqrt(33.0) / 12.0
    result = synthesize_standard(d, d)
    assert alpha_angle(result.matrices, 2000) == pytest.approx(87.871, abs=0.05)


@pytest.mark.parametrize("d1, d3, expected", [
    (0.3397, 0.4, 86.194),
    (0.657, 0.996, 88.341),
    (0.623, 1.16, 88.419),
])
def test_tabulated_curve_points(d1, d3, expected):
    d1, d3, value = project_to_curve(d1, d3)
    assert abs(value) <= 1e-10
    result = synthesize_standard(d1, d3)
    assert alpha_angle(result.matrices, 2000) == pytest.approx(expected, abs=0.3)


def test_not_zero_stable():
    growing = StageMatrixSet(role="standard", A=np.eye(2), B=2.0 * np.eye(2), K=[1.0, 1.0])
    stable, diagnostics = zero_stability(growing)
    assert not stable
    assert diagnostics["spectral_radius"] == pytest.approx(2.0)
    with pytest.raises(NotZeroStable):
        alpha_angle(growing)


def test_jordan_block_on_unit_circle_is_not_stable():
    jordan = StageMatrixSet(role="standard", A=np.eye(2), B=[[1.0, 1.0], [0.0, 1.0]], K=[1.0, 1.0])
    stable, diagnostics = zero_stability(jordan)
    assert not stable
    assert not diagnostics["unit_eigen_semisimple"]


def test_singular_k_has_no_locus():
    with pytest.raises(SingularK):
        root_locus(builtin_suite("BDF3o22").end, 100)


def test_root_locus_shape():
    thetas, z = root_locus(builtin_suite("BDF3o32").standard, 100)
    assert thetas.shape == (99,)
    assert z.shape == (99, 3)


def test_transformed_norms():
    X1 = jordan_basis_bdf3()
    assert transformed_norm(builtin_suite("BDF3o32").standard, X1) == pytest.approx(1.0, abs=1e-12)
    assert transformed_norm(builtin_suite("PEER3o32w").end, X1) <= 1.02
    assert transformed_norm(builtin_suite("BDF3o32").end, X1) <= 1.22
    with pytest.raises(ValueError):
        transformed_norm(builtin_suite("BDF3o32").standard, X1, "sideways")


def test_simplified_newton_contraction():
    end = builtin_suite("BDF3o32").end
    z_values = np.concatenate([[0.0], -np.logspace(-6, 6, 50)])
    assert max(contraction_radius(end, z) for z in z_values) <= 0.05
    with pytest.raises(MissingAtilde):
        adjoint_contraction_matrix(builtin_suite("PEER3o32w").end, 0.5)


@pytest.mark.parametrize("zeta", [0.0, 0.5, 3.0, 250.0])
def test_adjoint_contraction_has_forward_spectrum(zeta):
    end = builtin_suite("BDF3o32").end
    adjoint = adjoint_contraction_matrix(end, zeta)
    forward = contraction_matrix(end, -zeta)
    np.testing.assert_allclose(np.poly(adjoint), np.poly(forward), atol=1e-10)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(adjoint).astype(complex)),
                               np.sort_complex(np.linalg.eigvals(forward)), atol=1e-7)
    assert spectral_radius(adjoint) == pytest.approx(contraction_radius(end, -zeta), abs=1e-10)


def test_stability_report_for_bdf3():
    report = stability_report(builtin_suite("BDF3o32").standard, "BDF3o32", 400)
    assert report.zero_stable
    assert report.alpha_degrees == pytest.approx(86.03, abs=0.1)
    assert report.norm_bound_X1 == pytest.approx(1.0, abs=1e-12)
    assert 0 < len(report.locus_samples) <= 400


def test_stability_report_without_locus():
    report = stability_report(builtin_suite("BDF3o22").end, "BDF3o22", 400)
    assert report.alpha_degrees is None
    assert report.locus_samples == []


def test_projection_lands_on_curve():
    d1, d3, value = project_to_curve(0.3, 0.5)
    assert abs(q_polynomial(d1, d3)) <= 1e-10
    assert abs(value) <= 1e-10


def test_scan_box_contains():
    assert SCAN_BOXES["simplex"].contains(0.4, 0.5)
    assert not SCAN_BOXES["simplex"].contains(0.6, 0.5)
    assert ScanBox(d1_min=-1, d1_max=0, d3_min=0, d3_max=1).contains(-0.5, 0.5)


def test_scan_is_deterministic():
    box = SCAN_BOXES["unit"]
    first = scan_q_curve(box, 16, rng_seed=3, n_theta=200, workers=2)
    second = scan_q_curve(box, 16, rng_seed=3, n_theta=200, workers=1)
    assert first.records == second.records
    for record in first.records:
        assert box.contains(record.d1, record.d3)
        assert record.q_residual <= 1e-10
    pairs = [(r.d1, r.d3) for r in first.records]
    assert pairs == sorted(pairs)
