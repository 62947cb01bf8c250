"""Exception hierarchy shared by all modules."""


class RiccatiKrylovError(Exception):
    """Base class for errors raised by this package."""


class NonFiniteInputError(RiccatiKrylovError, ValueError):
    pass


class UnstableMatrixError(RiccatiKrylovError):
    """A matrix that must be stable has an eigenvalue with nonnegative real part."""

    def __init__(self, msg, eigenvalue=None, context=None):
        super().__init__(msg)
        self.eigenvalue = eigenvalue
        self.context = context or {}


class SylvesterError(RiccatiKrylovError):
    pass


class RiccatiSolveError(RiccatiKrylovError):
    pass


class IndefiniteMatrixError(RiccatiKrylovError):
    pass


class SingularFactorError(RiccatiKrylovError):
    """Raised when a (shifted) factorization is singular.

    ``kind`` is ``"structural"`` or ``"numerical"``.
    """

    def __init__(self, msg, kind):
        super().__init__(msg)
        self.kind = kind


class CapacitanceError(RiccatiKrylovError):
    """The Sherman-Morrison-Woodbury capacitance matrix is singular."""


class MatrixMarketError(RiccatiKrylovError, ValueError):
    pass


class InvariantSubspaceError(RiccatiKrylovError):
    """No new directions can be added to the Krylov basis."""


class BreakdownError(RiccatiKrylovError):
    pass


class ShiftSelectionError(RiccatiKrylovError):
    pass


class LineSearchError(RiccatiKrylovError):
    pass


class ConfigError(RiccatiKrylovError, ValueError):
    pass
