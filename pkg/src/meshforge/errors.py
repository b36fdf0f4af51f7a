"""Exception classes shared across the package."""


class MeshforgeError(Exception):
    """Base class for all library errors."""


class DenominatorNearZero(MeshforgeError):
    """A rational-model denominator fell below the numerical guard."""


class OutsideValidity(MeshforgeError):
    """A point lies beyond the expanded validity box of a sensor model."""


class UtmConversionFailure(MeshforgeError):
    """Latitude/longitude outside the usable transverse Mercator domain."""


class DegenerateWindow(MeshforgeError):
    """A correlation window has (near-)zero intensity variance."""


class EmptyDem(MeshforgeError):
    """A DEM holds too few valid cells for the requested operation."""


class IsolatedVertex(MeshforgeError):
    """A mesh vertex has no one-ring neighborhood."""


class InverseDivergence(MeshforgeError):
    """Inverse projection failed to converge for too many pixels."""


class NoValidPairs(MeshforgeError):
    """No stereo pair produced any valid photometric support."""


class InsufficientOverlap(MeshforgeError):
    """Two grids share too few co-valid cells."""


class EmptyEvaluation(MeshforgeError):
    """The evaluation mask selects no usable cells."""


class FitResidualTooLarge(MeshforgeError):
    """Rational-model fitting did not reach the requested pixel accuracy."""


class ConfigError(MeshforgeError):
    """A project configuration is inconsistent or incomplete."""
