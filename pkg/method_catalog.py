#!/usr/bin/env python3
"""
Method Catalog Module
Nodes, coefficient sets and complete Peer method suites

Builtin suites are stored as method files under methods/ and parsed by the
same loader that reads user-supplied files. Entries are parsed as exact
fractions and converted to floating point once.
"""

import os
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import (
    DimensionMismatch,
    InvariantViolation,
    ParseError,
    SingularMatrix,
    UnknownMethod,
)
from linalg_core import as_matrix, solve_dense

logger = logging.getLogger(__name__)

ROLES = ("start", "standard", "end")
NODE_GAP = 1e-12
SUM_TOL = 1e-9

METHODS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "methods")
BUILTIN_NAMES = ("BDF3o22", "BDF3o32", "PEER3o32w")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Nodes:
    """Off-step nodes c_1..c_s"""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel()
        if c.size < 2:
            raise InvariantViolation("s >= 2", f"got {c.size} nodes")
        gaps = np.abs(c[:, None] - c[None, :]) + np.eye(c.size)
        if np.min(gaps) <= NODE_GAP:
            raise InvariantViolation("nodes distinct", f"c = {c.tolist()}")
        object.__setattr__(self, "c", _frozen(c))

    @property
    def s(self) -> int:
        return int(self.c.size)

    @property
    def d1(self) -> float:
        return float(self.c[1] - self.c[0])

    @property
    def d3(self) -> float:
        return float(self.c[2] - self.c[1])

    def shifted(self, offset: float) -> "Nodes":
        return Nodes(self.c + offset)


@dataclass(frozen=True)
class StageMatrixSet:
    """
    One coefficient set (A, B, K) of a Peer method

    K is diagonal and stored as its diagonal. Start sets carry no B; end sets
    may carry Atilde, the lower triangular simplified-Newton matrix.
    """

    role: str
    A: np.ndarray
    K: np.ndarray
    B: Optional[np.ndarray] = None
    Atilde: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvariantViolation("role", f"unknown role {self.role!r}")

        a = as_matrix(self.A, f"{self.role} A")
        s = a.shape[0]
        if a.shape != (s, s):
            raise DimensionMismatch(f"{self.role} A must be square, got {a.shape}")

        k = np.asarray(self.K, dtype=np.float64)
        if k.ndim == 2:
            if k.shape != (s, s):
                raise DimensionMismatch(f"{self.role} K has shape {k.shape}, expected {(s, s)}")
            if np.any(np.abs(k - np.diag(np.diag(k))) > 0):
                raise InvariantViolation("K diagonal", f"{self.role} K has off-diagonal entries")
            k = np.diag(k)
        if k.shape != (s,):
            raise DimensionMismatch(f"{self.role} K has {k.size} entries, expected {s}")

        if self.role in ("start", "standard") and np.any(np.triu(a, 1) != 0):
            raise InvariantViolation("A lower triangular", f"{self.role} A has entries above the diagonal")

        try:
            solve_dense(a, np.eye(s))
        except SingularMatrix as e:
            raise InvariantViolation("A nonsingular", f"{self.role} A: {e}")

        b = None
        if self.B is not None:
            if self.role == "start":
                raise InvariantViolation("start set has no B")
            b = as_matrix(self.B, f"{self.role} B")
            if b.shape != (s, s):
                raise DimensionMismatch(f"{self.role} B has shape {b.shape}, expected {(s, s)}")
        elif self.role != "start":
            raise InvariantViolation("B present", f"{self.role} set needs B")

        atilde = None
        if self.Atilde is not None:
            if self.role != "end":
                raise InvariantViolation("Atilde only on end sets")
            atilde = as_matrix(self.Atilde, "Atilde")
            if atilde.shape != (s, s) or np.any(np.triu(atilde, 1) != 0):
                raise InvariantViolation("Atilde lower triangular")

        object.__setattr__(self, "A", _frozen(a))
        object.__setattr__(self, "K", _frozen(k))
        object.__setattr__(self, "B", None if b is None else _frozen(b))
        object.__setattr__(self, "Atilde", None if atilde is None else _frozen(atilde))

    @property
    def s(self) -> int:
        return int(self.A.shape[0])

    @property
    def Kmat(self) -> np.ndarray:
        return np.diag(self.K)

    @property
    def is_triangular(self) -> bool:
        return not np.any(np.triu(self.A, 1) != 0)

    def scaled(self, factor: float) -> "StageMatrixSet":
        return StageMatrixSet(
            role=self.role,
            A=factor * self.A,
            K=factor * self.K,
            B=None if self.B is None else factor * self.B,
            Atilde=None if self.Atilde is None else factor * self.Atilde,
        )


@dataclass(frozen=True)
class PeerMethodSuite:
    """Complete method: nodes, start/standard/end sets and derived vectors a, b, w, v"""

    name: str
    nodes: Nodes
    start: StageMatrixSet
    standard: StageMatrixSet
    end: StageMatrixSet
    a: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    w: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    @property
    def s(self) -> int:
        return self.nodes.s

    @property
    def c(self) -> np.ndarray:
        return self.nodes.c


def derive_v(nodes: Nodes) -> np.ndarray:
    """
    Interpolation weights for p_h(0)

    Solves v^T 1 = 1, v^T c^j = 0 (j = 1..s-1) from the Vandermonde system.
    """
    c = nodes.c
    vandermonde = c[:, None] ** np.arange(nodes.s)[None, :]
    rhs = np.zeros(nodes.s)
    rhs[0] = 1.0
    return solve_dense(vandermonde.T, rhs)


def build_suite(name: str, nodes: Nodes, start: StageMatrixSet, standard: StageMatrixSet,
                end: StageMatrixSet) -> PeerMethodSuite:
    """
    Assemble a suite and compute a = A0 1, b = A0 c - K0 1, w = A_N^T 1, v

    Raises InvariantViolation for role/dimension mismatches or 1^T w != 1.
    """
    for expected, matrices in zip(ROLES, (start, standard, end)):
        if matrices.role != expected:
            raise InvariantViolation("roles", f"expected {expected} set, got {matrices.role}")
        if matrices.s != nodes.s:
            raise InvariantViolation("dimensions", f"{expected} set has s = {matrices.s}, nodes s = {nodes.s}")

    ones = np.ones(nodes.s)
    a = start.A @ ones
    b = start.A @ nodes.c - start.K
    w = end.A.T @ ones
    v = derive_v(nodes)

    if abs(w.sum() - 1.0) > SUM_TOL:
        raise InvariantViolation("1^T w = 1", f"sum(w) = {w.sum():.15g}")
    if abs(v.sum() - 1.0) > SUM_TOL:
        raise InvariantViolation("1^T v = 1", f"sum(v) = {v.sum():.15g}")

    return PeerMethodSuite(
        name=name, nodes=nodes, start=start, standard=standard, end=end,
        a=_frozen(a), b=_frozen(b), w=_frozen(w), v=_frozen(v),
    )


# ---------------------------------------------------------------------------
# Method file format
# ---------------------------------------------------------------------------

_MATRIX_KEYS = {"A", "B", "K", "Atilde"}


def _parse_number(token: str, line: int, column: int) -> Fraction:
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"invalid number {token!r}", line, column)


def _parse_rows(text: str, line: int, column: int) -> List[List[Fraction]]:
    rows = []
    offset = column
    for chunk in text.split(";"):
        row = []
        position = 0
        for token in chunk.split():
            position = chunk.index(token, position)
            row.append(_parse_number(token, line, offset + position))
            position += len(token)
        if not row:
            raise ParseError("empty matrix row", line, offset)
        rows.append(row)
        offset += len(chunk) + 1
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise ParseError("matrix rows have different lengths", line, column)
    return rows


def parse_method_text(text: str) -> Dict:
    """
    Parse the method file format into exact fractions

    Returns:
        dict with "name", "c" and one dict per section ("start", "standard", "end")
        mapping matrix keys to lists of rows of Fractions
    """
    parsed: Dict = {"name": None, "c": None}
    section: Optional[str] = None

    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        indent = len(line) - len(line.lstrip()) + 1

        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError("unterminated section header", line_number, indent)
            section = stripped[1:-1].strip()
            if section not in ROLES:
                raise ParseError(f"unknown section [{section}]", line_number, indent + 1)
            if section in parsed:
                raise ParseError(f"duplicate section [{section}]", line_number, indent)
            parsed[section] = {}
            continue

        if "=" not in stripped:
            raise ParseError("expected 'key = value'", line_number, indent)
        key, value = stripped.split("=", 1)
        key = key.strip()
        value_column = line.index("=") + 2

        if section is None:
            if key == "name":
                parsed["name"] = value.strip()
            elif key == "c":
                rows = _parse_rows(value, line_number, value_column)
                if len(rows) != 1:
                    raise ParseError("c must be a single row", line_number, value_column)
                parsed["c"] = rows[0]
            else:
                raise ParseError(f"unknown key {key!r} before the first section", line_number, indent)
        else:
            if key not in _MATRIX_KEYS:
                raise ParseError(f"unknown key {key!r} in [{section}]", line_number, indent)
            if key in parsed[section]:
                raise ParseError(f"duplicate key {key!r} in [{section}]", line_number, indent)
            parsed[section][key] = _parse_rows(value, line_number, value_column)

    if parsed["name"] is None:
        raise ParseError("missing 'name = ...'", 1)
    if parsed["c"] is None:
        raise ParseError("missing 'c = ...'", 1)
    return parsed


def _to_array(rows: List[List[Fraction]]) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in rows], dtype=np.float64)


def stage_set_from_entries(role: str, entries: Dict) -> StageMatrixSet:
    """Build a StageMatrixSet from parsed rows; K may be a row or a matrix"""
    if "A" not in entries or "K" not in entries:
        raise InvariantViolation("A and K present", f"[{role}] needs A and K")
    k = _to_array(entries["K"])
    if k.shape[0] == 1:
        k = k[0]
    return StageMatrixSet(
        role=role,
        A=_to_array(entries["A"]),
        K=k,
        B=_to_array(entries["B"]) if "B" in entries else None,
        Atilde=_to_array(entries["Atilde"]) if "Atilde" in entries else None,
    )


def suite_from_text(text: str) -> PeerMethodSuite:
    parsed = parse_method_text(text)
    missing = [role for role in ROLES if role not in parsed]
    if missing:
        raise InvariantViolation("sections present", f"missing [{'], ['.join(missing)}]")
    nodes = Nodes(np.array([float(x) for x in parsed["c"]]))
    sets = [stage_set_from_entries(role, parsed[role]) for role in ROLES]
    return build_suite(parsed["name"], nodes, *sets)


def load_suite(path: str) -> PeerMethodSuite:
    """
    Load a method file

    Args:
        path: UTF-8 text file in the method file format

    Returns:
        PeerMethodSuite with all invariants checked
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    suite = suite_from_text(text)
    logger.info(f"✅ Loaded method {suite.name} (s = {suite.s}) from {path}")
    return suite


def _format_value(x: float) -> str:
    return repr(float(x))


def format_stage_set(matrices: StageMatrixSet) -> str:
    """Render one set as a [role] block with full float precision"""
    def rows(m: np.ndarray) -> str:
        return "; ".join(" ".join(_format_value(x) for x in row) for row in m)

    lines = [f"[{matrices.role}]", f"A = {rows(matrices.A)}"]
    if matrices.B is not None:
        lines.append(f"B = {rows(matrices.B)}")
    lines.append("K = " + " ".join(_format_value(x) for x in matrices.K))
    if matrices.Atilde is not None:
        lines.append(f"Atilde = {rows(matrices.Atilde)}")
    return "\n".join(lines)


def format_method_file(name: str, c: np.ndarray, sets: List[StageMatrixSet]) -> str:
    header = [f"name = {name}", "c = " + " ".join(_format_value(x) for x in c)]
    return "\n\n".join(["\n".join(header)] + [format_stage_set(m) for m in sets]) + "\n"


# ---------------------------------------------------------------------------
# Builtin suites
# ---------------------------------------------------------------------------

_builtin_cache: Dict[str, PeerMethodSuite] = {}


def builtin_suite(name: str) -> PeerMethodSuite:
    """
    Get one of the shipped methods by name

    Raises:
        UnknownMethod: name is not one of BDF3o22, BDF3o32, PEER3o32w
    """
    if name not in BUILTIN_NAMES:
        raise UnknownMethod(f"unknown method {name!r}; builtin methods: {', '.join(BUILTIN_NAMES)}")
    if name not in _builtin_cache:
        path = os.path.join(METHODS_DIR, f"{name}.peer")
        with open(path, "r", encoding="utf-8") as f:
            _builtin_cache[name] = suite_from_text(f.read())
    return _builtin_cache[name]


def resolve_suite(name_or_path: str) -> PeerMethodSuite:
    """Builtin name, or a path to a method file"""
    if name_or_path in BUILTIN_NAMES:
        return builtin_suite(name_or_path)
    if os.path.exists(name_or_path):
        return load_suite(name_or_path)
    raise UnknownMethod(f"{name_or_path!r} is neither a builtin method nor a readable file")


# ---------------------------------------------------------------------------
# Order-compatibility polynomials
# ---------------------------------------------------------------------------

def q_polynomial(d1, d3):
    """
    Q(d1, d3) whose zero set holds the node differences admitting (q1, q2) = (4, 3)

    Accepts scalars or numpy arrays.
    """
    return (3.0 * (11.0 * d1 ** 2 + 18.0 * d1 * d3 + 7.0 * d3 ** 2) * d1 * d3
            - 15.0 * d1 ** 3 - 67.0 * d1 ** 2 * d3 - 55.0 * d1 * d3 ** 2 - 7.0 * d3 ** 3
            + 5.0 * (3.0 * d1 ** 2 + 5.0 * d1 * d3 + d3 ** 2) + 3.0 * (d1 + d3) - 3.0)


def q_gradient(d1, d3) -> Tuple:
    """(dQ/dd1, dQ/dd3)"""
    dq_dd1 = (99.0 * d1 ** 2 * d3 + 108.0 * d1 * d3 ** 2 + 21.0 * d3 ** 3
              - 45.0 * d1 ** 2 - 134.0 * d1 * d3 - 55.0 * d3 ** 2 + 30.0 * d1 + 25.0 * d3 + 3.0)
    dq_dd3 = (33.0 * d1 ** 3 + 108.0 * d1 ** 2 * d3 + 63.0 * d1 * d3 ** 2
              - 67.0 * d1 ** 2 - 110.0 * d1 * d3 - 21.0 * d3 ** 2 + 25.0 * d1 + 10.0 * d3 + 3.0)
    return dq_dd1, dq_dd3


def qn_bdf3_cubic(c2):
    """End-method condition for BDF3 nodes with c_3 != 1, as a cubic in c2"""
    return 12.0 * c2 ** 3 - 33.0 * c2 ** 2 + 28.0 * c2 - 43.0 / 6.0


def _real_roots(coefficients: np.ndarray, evaluate, derivative) -> np.ndarray:
    roots = np.roots(coefficients)
    real = np.sort(roots[np.abs(roots.imag) <= 1e-8 * (1.0 + np.abs(roots.real))].real)
    for _ in range(3):
        real = real - evaluate(real) / derivative(real)
    return np.sort(real)


def qn_bdf3_roots() -> np.ndarray:
    """Real roots of the BDF3 end-method cubic, ascending"""
    return _real_roots(
        np.array([12.0, -33.0, 28.0, -43.0 / 6.0]),
        qn_bdf3_cubic,
        lambda x: 36.0 * x ** 2 - 66.0 * x + 28.0,
    )


def equidistant_roots() -> np.ndarray:
    """Real roots of Q(d, d) = 3 (3d - 1)(2d - 1)(6d^2 - 3d - 1), ascending"""
    return _real_roots(
        np.array([108.0, -144.0, 45.0, 6.0, -3.0]),
        lambda d: q_polynomial(d, d),
        lambda d: 432.0 * d ** 3 - 432.0 * d ** 2 + 90.0 * d + 6.0,
    )
