"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`QoedError`,
so callers (and the CLI exit-code mapping) can separate contract violations
from numerical failures.
"""


class QoedError(Exception):
    """Base class for package errors."""


class ContractError(QoedError, ValueError):
    """Input violates a documented precondition (usage error)."""


class ShapeError(ContractError):
    """Matrix dimensions are incompatible."""


class NotHermitianError(ContractError):
    """A matrix expected to be Hermitian is not, within tolerance."""


class InvalidStateError(ContractError):
    """Bloch vector longer than one (not a physical state or POVM axis)."""


class NumericalError(QoedError, ArithmeticError):
    """A numerical integrity check failed."""


class NonRealTraceError(NumericalError):
    """Trace has an imaginary part larger than the tolerance."""


class SingularMatrixError(NumericalError):
    """Matrix is singular or too ill-conditioned to invert.

    ``pivot`` is the magnitude of the pivot that failed.
    """

    def __init__(self, message, pivot=0.0):
        super().__init__(message)
        self.pivot = pivot


class NotEstimableError(NumericalError):
    """Combined Fisher matrix is singular: some parameter is unidentifiable."""


class InvalidStartError(NumericalError):
    """Local refinement started where the likelihood is not finite."""


class EmptyLandscapeError(NumericalError):
    """Every cell of a parameter landscape failed."""
