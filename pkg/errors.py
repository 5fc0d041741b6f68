#!/usr/bin/env python3
"""
Error types shared by every module

All failures raised by the library derive from PeerError so the CLI and the
report service can map them to an exit code / HTTP status in one place.
"""

from typing import List, Optional


class PeerError(Exception):
    """Base class for all library errors"""


class SingularMatrix(PeerError):
    pass


class DimensionMismatch(PeerError):
    pass


class NonFiniteValue(PeerError):
    pass


class UnknownMethod(PeerError):
    pass


class ParseError(PeerError):
    """Method file could not be parsed; carries the offending position"""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class InvariantViolation(PeerError):
    """A named structural invariant of a method does not hold"""

    def __init__(self, invariant: str, detail: str = ""):
        message = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(message)
        self.invariant = invariant


class UnsupportedQ(PeerError):
    pass


class MissingMatrix(PeerError):
    pass


class DegenerateNodes(PeerError):
    pass


class NotOnCurve(PeerError):
    """Order conditions (q1, q2) = (4, 3) are not solvable at the given node differences"""

    def __init__(self, d1: float, d3: float, residual: float):
        super().__init__(f"(d1, d3) = ({d1:.6g}, {d3:.6g}) is off the Q = 0 curve, residual {residual:.3e}")
        self.d1 = d1
        self.d3 = d3
        self.residual = residual


class NotZeroStable(PeerError):
    pass


class SingularK(PeerError):
    pass


class MissingAtilde(PeerError):
    pass


class NewtonDivergence(PeerError):
    pass


class SingularStageJacobian(PeerError):
    pass


class NoConvergence(PeerError):
    """Outer KKT iteration failed; history holds the update norms per iteration"""

    def __init__(self, message: str, history: Optional[List[float]] = None):
        super().__init__(message)
        self.history = list(history or [])


class ReferenceNotConverged(PeerError):
    pass


class NonpositiveEpsilon(PeerError):
    pass


class UnknownProblem(PeerError):
    pass


class InvalidGrid(PeerError, ValueError):
    """N < 2 or a nonpositive horizon"""
