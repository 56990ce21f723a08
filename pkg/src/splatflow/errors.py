"""Exception types shared across splatflow modules."""

from __future__ import annotations


class SplatFlowError(Exception):
    """Base class for all splatflow errors."""


class DegenerateProjection(SplatFlowError, ValueError):
    """Homogeneous w is (numerically) zero: the point lies on the camera plane."""


class Clipped(SplatFlowError, ValueError):
    """A point falls outside the (z_near, z_far) depth range of a camera."""


class BehindCamera(SplatFlowError, ValueError):
    pass


class DimensionMismatch(SplatFlowError, ValueError):
    pass


class EmptyMask(SplatFlowError, ValueError):
    pass


class TooSmall(SplatFlowError, ValueError):
    """Grid is too small for the requested stencil."""


class ConfigInvalid(SplatFlowError, ValueError):
    pass


class OutputUnwritable(SplatFlowError, OSError):
    pass


class FloFormatError(SplatFlowError, ValueError):
    """Malformed .flo payload."""


class BadMagic(FloFormatError):
    pass


class TruncatedFile(FloFormatError):
    pass


class DimensionOverflow(FloFormatError):
    pass


class SinkError(SplatFlowError, OSError):
    pass
