"""Exception types shared across the package.

Every error carries a stable machine-readable ``code`` so the CLI can map
failures onto exit codes (2 for input/validation problems, 3 for
computation failures) without string matching.
"""

from __future__ import annotations


class DrustatError(Exception):
    """Base class for all package errors."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ValidationError(DrustatError):
    """Raised when inputs violate a documented invariant (CLI exit 2)."""


class EstimationError(DrustatError):
    """Raised when a computation cannot be completed (CLI exit 3)."""


# Validation codes
MISMATCHED_LENGTH = "MISMATCHED_LENGTH"
OMEGA_BELOW_ONE = "OMEGA_BELOW_ONE"
NO_TREATED = "NO_TREATED"
NONFINITE_VALUE = "NONFINITE_VALUE"
BOUND_EXCEEDED = "BOUND_EXCEEDED"
K_OUT_OF_RANGE = "K_OUT_OF_RANGE"
ONE_CLASS = "ONE_CLASS"
TOO_FEW_TREATED = "TOO_FEW_TREATED"
K_TOO_LARGE = "K_TOO_LARGE"
EPS_GT_DELTA = "EPS_GT_DELTA"
INVALID_DENSITY = "INVALID_DENSITY"
BAD_INPUT = "BAD_INPUT"

# Computation codes
SEPARATION_OR_SINGULAR = "SEPARATION_OR_SINGULAR"
ALL_QHAT_ZERO = "ALL_QHAT_ZERO"
NO_SIGN_CHANGE = "NO_SIGN_CHANGE"
DEGENERATE_MOMENT = "DEGENERATE_MOMENT"
