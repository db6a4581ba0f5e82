"""Exception types raised across the package."""


class TangentClustError(Exception):
    """Base class for all package errors."""


class ManifoldMismatch(TangentClustError, ValueError):
    """Arrays do not match the manifold's ambient representation."""


class CutLocus(TangentClustError, ArithmeticError):
    """The target lies in the cut locus of the base point; log is undefined."""


class TangencyViolation(TangentClustError, ValueError):
    """A vector fails the tangency condition at its base point."""


class InvalidPoint(TangentClustError, ValueError):
    """An array cannot be normalized into a valid manifold point."""


class DegenerateNeighborhood(TangentClustError):
    """Fewer than two points in a neighborhood."""


class AllZeroSpectrum(TangentClustError, ValueError):
    """Dimension estimation on a spectrum with no positive eigenvalue."""


class EmptyCandidates(TangentClustError, ValueError):
    """Sparse coding called without candidate vectors."""


class EigenFailure(TangentClustError, RuntimeError):
    """The eigensolver failed inside spectral clustering."""


class InvalidSpec(TangentClustError, ValueError):
    """A dataset specification is out of range."""


class ParseError(TangentClustError, ValueError):
    """A dataset or config file could not be parsed.

    Attributes
    ----------
    offset : int or None
        Byte offset of the failure, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatch(ParseError):
    """The file was written with an unsupported format version."""
