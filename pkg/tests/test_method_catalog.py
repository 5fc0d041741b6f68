import math

import numpy as np
import pytest

from errors import InvariantViolation, ParseError, UnknownMethod
from method_catalog import (
    BUILTIN_NAMES,
    Nodes,
    StageMatrixSet,
    builtin_suite,
    equidistant_roots,
    format_method_file,
    parse_method_text,
    q_gradient,
    q_polynomial,
    qn_bdf3_roots,
    resolve_suite,
    suite_from_text,
)

BDF3_A = [[11 / 6, 0, 0], [-3, 11 / 6, 0], [1.5, -3, 11 / 6]]
BDF3_B = [[1 / 3, -1.5, 3], [0, 1 / 3, -1.5], [0, 0, 1 / 3]]


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_suites_load(name):
    suite = builtin_suite(name)
    assert suite.name == name
    assert suite.s == 3
    assert suite.w.sum() == pytest.approx(1.0, abs=1e-14)
    assert suite.v.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(suite.standard.A, BDF3_A, atol=1e-15)
    assert builtin_suite(name) is suite


def test_bdf3_end_weights_are_last_unit_vector():
    suite = builtin_suite("BDF3o32")
    np.testing.assert_allclose(suite.w, [0.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(suite.a, suite.start.A.sum(axis=1))
    assert suite.end.Atilde is not None
    assert not suite.end.is_triangular


def test_v_interpolates_to_zero():
    suite = builtin_suite("PEER3o32w")
    c = suite.c
    assert suite.v @ c == pytest.approx(0.0, abs=1e-12)
    assert suite.v @ c ** 2 == pytest.approx(0.0, abs=1e-12)


def test_unknown_method():
    with pytest.raises(UnknownMethod):
        builtin_suite("RK4")
    with pytest.raises(UnknownMethod):
        resolve_suite("/nonexistent/method.peer")


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        parse_method_text("name = X\nc = 1 2 x\n")
    assert info.value.line == 2
    assert info.value.column == 9
    assert "line 2, column 9" in str(info.value)


def test_parse_rejects_unknown_section_and_ragged_rows():
    with pytest.raises(ParseError):
        parse_method_text("name = X\nc = 0 1\n[middle]\n")
    with pytest.raises(ParseError):
        parse_method_text("name = X\nc = 0 1\n[standard]\nA = 1 0; 1\n")


def test_parse_exact_fractions():
    parsed = parse_method_text("# comment\nname = X\nc = 1/3 2/3  # trailing\n[start]\nA = 1 0; -1/7 2\nK = 1 1\n")
    assert parsed["name"] == "X"
    assert str(parsed["c"][0]) == "1/3"
    assert str(parsed["start"]["A"][1][0]) == "-1/7"


def test_stage_matrix_invariants():
    with pytest.raises(InvariantViolation) as info:
        StageMatrixSet(role="standard", A=[[1.0, 1.0], [0.0, 1.0]], B=np.eye(2), K=[1.0, 1.0])
    assert info.value.invariant == "A lower triangular"

    with pytest.raises(InvariantViolation) as info:
        StageMatrixSet(role="start", A=np.eye(2), B=np.eye(2), K=[1.0, 1.0])
    assert info.value.invariant == "start set has no B"

    with pytest.raises(InvariantViolation) as info:
        StageMatrixSet(role="standard", A=np.eye(2), B=np.eye(2), K=[[1.0, 0.5], [0.0, 1.0]])
    assert info.value.invariant == "K diagonal"

    with pytest.raises(InvariantViolation) as info:
        StageMatrixSet(role="end", A=[[1.0, 0.0], [1.0, 0.0]], B=np.eye(2), K=[1.0, 1.0])
    assert info.value.invariant == "A nonsingular"


def test_nodes_invariants():
    with pytest.raises(InvariantViolation) as info:
        Nodes(np.array([0.0, 0.5, 0.5]))
    assert info.value.invariant == "nodes distinct"
    with pytest.raises(InvariantViolation):
        Nodes(np.array([1.0]))
    nodes = Nodes(np.array([0.0, 0.25, 0.75]))
    assert nodes.d1 == 0.25 and nodes.d3 == 0.5


def test_method_file_round_trip(tmp_path):
    suite = builtin_suite("BDF3o32")
    text = format_method_file("copy", suite.c, [suite.start, suite.standard, suite.end])
    path = tmp_path / "copy.peer"
    path.write_text(text)
    loaded = resolve_suite(str(path))
    assert loaded.name == "copy"
    for role in ("start", "standard", "end"):
        np.testing.assert_array_equal(getattr(loaded, role).A, getattr(suite, role).A)
        np.testing.assert_array_equal(getattr(loaded, role).K, getattr(suite, role).K)
    np.testing.assert_array_equal(loaded.end.Atilde, suite.end.Atilde)


def test_missing_sections():
    with pytest.raises(InvariantViolation):
        suite_from_text("name = X\nc = 0 1\n[start]\nA = 1 0; 0 1\nK = 1 1\n")


@pytest.mark.parametrize("d", [-0.5, 0.1, 1 / 3, 0.7, 2.0])
def test_q_on_diagonal_factorizes(d):
    expected = 3.0 * (3 * d - 1) * (2 * d - 1) * (6 * d ** 2 - 3 * d - 1)
    assert q_polynomial(d, d) == pytest.approx(expected, abs=1e-12)


def test_q_gradient_matches_differences():
    d1, d3, step = 0.3, 0.45, 1e-6
    g1, g3 = q_gradient(d1, d3)
    assert g1 == pytest.approx((q_polynomial(d1 + step, d3) - q_polynomial(d1 - step, d3)) / (2 * step), rel=1e-6)
    assert g3 == pytest.approx((q_polynomial(d1, d3 + step) - q_polynomial(d1, d3 - step)) / (2 * step), rel=1e-6)


def test_equidistant_roots():
    roots = equidistant_roots()
    root33 = math.sqrt(33.0)
    np.testing.assert_allclose(roots, [(3 - root33) / 12, 1 / 3, 0.5, (3 + root33) / 12], atol=1e-13)


def test_bdf3_end_cubic_roots():
    roots = qn_bdf3_roots()
    assert roots.size == 3
    assert roots[0] == pytest.approx(0.48059993107999468110, abs=1e-14)
    assert roots[1] == pytest.approx(0.9228, abs=1e-3)
    assert roots[2] == pytest.approx(1.3466, abs=1e-3)
