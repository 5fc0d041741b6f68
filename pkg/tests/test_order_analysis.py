import math

import numpy as np
import pytest

from errors import MissingMatrix, NotOnCurve, UnsupportedQ
from method_catalog import Nodes, builtin_suite, q_polynomial
from order_analysis import (
    CONDITION_KINDS,
    OrderOperators,
    achieved_orders,
    condition_residual,
    kernel_determinant,
    leading_error,
    lyapunov_kernel,
    pascal_sylvester_solve,
    persymmetric_residual,
    shift_matrix,
    shifted_pascal,
    sylvester_residual,
    synthesize_standard,
    theta_e_operators,
    triangular_kernel,
    _triangular_pascal_operator,
)


def test_operators_consistent():
    ops = OrderOperators(np.array([1 / 3, 2 / 3, 1.0]), 4)
    np.testing.assert_allclose(ops.P @ ops.Pinv, np.eye(4), atol=1e-14)
    np.testing.assert_allclose(ops.P_shift(1.0), ops.P, atol=1e-14)
    np.testing.assert_allclose(shifted_pascal(4, 0.5) @ shifted_pascal(4, 0.5), ops.P, atol=1e-14)
    np.testing.assert_allclose(ops.Vprime[:, 2], 2 * ops.c, atol=1e-15)
    assert shift_matrix(3)[1, 2] == 2.0


@pytest.mark.parametrize("name", ["BDF3o32", "PEER3o32w"])
def test_complete_methods_meet_every_condition(name):
    report = achieved_orders(builtin_suite(name))
    assert report.all_met, report.unmet()
    assert report.condition("standard-forward").achieved == 4
    assert report.condition("standard-adjoint").achieved == 3


def test_rational_residuals_at_rounding_level():
    suite = builtin_suite("BDF3o32")
    for kind in CONDITION_KINDS:
        required = achieved_orders(suite).condition(kind).required
        _, worst = condition_residual(kind, suite, required)
        assert worst <= 1e-13, kind


def test_semi_explicit_end_misses_only_last_forward():
    report = achieved_orders(builtin_suite("BDF3o22"))
    assert report.unmet() == ["last-forward"]
    assert report.condition("last-forward").achieved == 2


def test_condition_argument_checks():
    suite = builtin_suite("BDF3o32")
    with pytest.raises(ValueError):
        condition_residual("middle-forward", suite, 2)
    with pytest.raises(UnsupportedQ):
        condition_residual("start-adjoint", suite, 4)
    with pytest.raises(UnsupportedQ):
        condition_residual("standard-forward", suite, 0)


def test_bdf3_leading_error():
    suite = builtin_suite("BDF3o32")
    np.testing.assert_allclose(leading_error(suite.standard, suite.nodes, 3), np.full(3, -2 / 27), atol=1e-14)
    for q in (1, 2):
        np.testing.assert_allclose(leading_error(suite.standard, suite.nodes, q), 0.0, atol=1e-14)
    with pytest.raises(MissingMatrix):
        leading_error(suite.start, suite.nodes, 3)


def test_bdf3_sylvester_and_persymmetry():
    suite = builtin_suite("BDF3o32")
    std = suite.standard
    assert sylvester_residual(std.A, std.K, suite.nodes, 4, 3) <= 1e-10
    assert sylvester_residual(std.A, std.K, suite.nodes, 3, 3) <= 1e-10
    res_a, res_b = persymmetric_residual(std)
    assert res_a <= 1e-14 and res_b <= 1e-14
    with pytest.raises(UnsupportedQ):
        sylvester_residual(std.A, std.K, suite.nodes, 5, 3)


@pytest.mark.parametrize("c", [[1 / 3, 2 / 3, 1.0], [0.2, 0.5, 0.8], [0.0, 0.25, 0.75, 1.0]])
def test_flip_identities_on_symmetric_nodes(c):
    theta, differentiation = theta_e_operators(Nodes(np.array(c)))
    pi = np.fliplr(np.eye(len(c)))
    np.testing.assert_allclose(pi @ theta @ pi, np.linalg.inv(theta), atol=1e-12)
    np.testing.assert_allclose(pi @ differentiation @ pi, -differentiation, atol=1e-12)


def test_flip_identity_needs_symmetric_nodes():
    _, differentiation = theta_e_operators(Nodes(np.array([0.1, 0.5, 1.0])))
    pi = np.fliplr(np.eye(3))
    assert np.max(np.abs(pi @ differentiation @ pi + differentiation)) > 1e-3


def test_end_set_is_not_persymmetric():
    res_a, _ = persymmetric_residual(builtin_suite("BDF3o32").end)
    assert res_a > 1e-3


def test_pascal_sylvester_solvable():
    rng = np.random.default_rng(11)
    for q in (3, 4):
        _, residual = pascal_sylvester_solve(rng.normal(size=(q, q)))
        assert residual <= 1e-10


@pytest.mark.parametrize("q", [3, 4])
def test_lyapunov_kernel(q):
    kernel = lyapunov_kernel(q)
    assert len(kernel) == q
    E = shift_matrix(q)
    for X in kernel:
        np.testing.assert_allclose(X @ E + E.T @ X, 0.0, atol=1e-12)
        assert np.max(np.abs(X)) == pytest.approx(1.0)


def test_kernel_determinant():
    assert kernel_determinant(0.2, 0.5) == pytest.approx(0.03)
    assert kernel_determinant(0.4, 0.4) == 0.0


@pytest.mark.parametrize("d", [1 / 3, 0.5, 0.8])
def test_triangular_kernel_on_equidistant_nodes(d):
    X = triangular_kernel(d, d)
    assert X is not None
    np.testing.assert_allclose(np.diag(X), 1.0)
    assert np.all(np.triu(X, 1) == 0)
    operator = _triangular_pascal_operator(np.array([0.0, d, 2 * d]))
    assert np.max(np.abs(operator @ X[np.tril_indices(3)])) <= 1e-10


def test_triangular_kernel_trivial_off_diagonal():
    assert triangular_kernel(0.2, 0.5) is None


def test_synthesis_reproduces_bdf3():
    result = synthesize_standard(1 / 3, 1 / 3)
    assert result.success
    assert result.iterations == 0
    assert abs(result.q_value) <= 1e-12
    np.testing.assert_allclose(result.matrices.A, builtin_suite("BDF3o32").standard.A, atol=1e-12)
    assert result.k_signs == [1, 1, 1]


def test_synthesis_on_equidistant_root():
    d = 0.25 + math.sqrt(33.0) / 12.0
    result = synthesize_standard(d, d)
    assert result.success
    assert result.residual <= 1e-10
    assert result.iterations <= 2
    data = result.to_dict()
    assert data["success"] and len(data["A"]) == 3


def test_synthesis_off_curve():
    with pytest.raises(NotOnCurve) as info:
        synthesize_standard(0.3, 0.3)
    assert info.value.residual > 1e-8


def test_synthesis_fails_at_random_off_curve_points():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 50:
        d1, d3 = rng.uniform(0.1, 2.0, 2)
        if abs(q_polynomial(d1, d3)) < 0.05:
            continue
        with pytest.raises(NotOnCurve):
            synthesize_standard(d1, d3)
        checked += 1
