"""Exception hierarchy for gaussrig.

Everything raised on purpose derives from :class:`GaussRigError`, so callers
can catch one base class at CLI or service boundaries.
"""


class GaussRigError(Exception):
    """Base class for all gaussrig errors."""


class InvalidParameterError(GaussRigError, ValueError):
    """A configuration value or function argument is out of its valid range."""


class InvalidInputError(GaussRigError, ValueError):
    """Input data violates a structural requirement (shape, count, sign)."""


class TopologyMismatchError(InvalidInputError):
    """Frames or meshes that must share topology do not."""


class FingerprintMismatchError(InvalidInputError):
    """A rig was applied to a mesh other than the one it was fitted on."""


class FileFormatError(GaussRigError, ValueError):
    """A rig/motion/report/config file could not be parsed or validated."""


class FitDivergedError(GaussRigError, RuntimeError):
    """The optimizer produced a non-finite loss.

    Carries the last finite parameter state so callers can inspect or
    restart from it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
