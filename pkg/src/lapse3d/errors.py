"""Exception types raised across the package.

Every error derives from :class:`Lapse3DError`; most also subclass the
closest builtin so callers can catch ``ValueError`` / ``OSError`` as usual.
"""


class Lapse3DError(Exception):
    """Base class for all package errors."""


# stack I/O
class BadMagic(Lapse3DError, ValueError):
    pass


class TruncatedPayload(Lapse3DError, ValueError):
    pass


class UnknownDtype(Lapse3DError, ValueError):
    pass


class NonPositiveSpacing(Lapse3DError, ValueError):
    pass


class InvalidGrid(Lapse3DError, ValueError):
    """Grid violates an invariant (shape, dtype, non-finite values)."""


class IoFailure(Lapse3DError, OSError):
    pass


# geometry / shapes
class GeometryMismatch(Lapse3DError, ValueError):
    pass


class ShapeMismatch(Lapse3DError, ValueError):
    pass


class NonCubicGrid(Lapse3DError, ValueError):
    pass


class KernelTooLarge(Lapse3DError, ValueError):
    pass


class BadWeightsFile(Lapse3DError, ValueError):
    pass


# segmentation
class NoSeedsFound(Lapse3DError, ValueError):
    pass


class EmptySeeds(Lapse3DError, ValueError):
    pass


class TooLargeForExactEnergy(Lapse3DError, ValueError):
    pass


# graph / features
class LabelMissing(Lapse3DError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IsolatedVertex(Lapse3DError, ValueError):
    pass


class NotAdjacent(Lapse3DError, ValueError):
    pass


class DisconnectedWall(Lapse3DError, ValueError):
    """Shared wall voxels split into several components.

    ``components`` holds one ``(n, 3)`` array of ``(x, y, z)`` voxel
    coordinates per component.
    """

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = list(components)


# tracking / metrics
class EmptySequence(Lapse3DError, ValueError):
    pass


class EmptyGroundTruth(Lapse3DError, ValueError):
    pass


class EmptyGroundTruthGraph(Lapse3DError, ValueError):
    pass


class EmptyPolyline(Lapse3DError, ValueError):
    pass


class ZeroLengthGroundTruth(Lapse3DError, ValueError):
    pass


# synthetic data
class SeedsTooCrowded(Lapse3DError, ValueError):
    pass


# configuration
class ConfigError(Lapse3DError, ValueError):
    """Configuration problem, reported with file and line when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
