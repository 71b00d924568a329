"""Exception hierarchy.

Every error raised on bad input derives from :class:`InputError` so the CLI
can map it onto exit code 2.
"""


class AlamError(Exception):
    """Base class for all package errors."""


class InputError(AlamError, ValueError):
    """Malformed or inconsistent input (dimensions, ranges, file contents)."""


class ConeTrivialError(AlamError):
    """No nonzero cone direction was found within the trial budget."""


class RotateFirstError(InputError):
    """``A1 @ a`` is nonzero; the lamination frame has not been applied."""


class RankHypothesisError(InputError):
    """The operator violates ``d = 2m`` or the kernel condition."""


class NotInConeError(InputError):
    """``b - a`` is not a characteristic direction."""


class CoercivityError(AlamError):
    """No sign change of the level set along a ray within the growth budget."""


class NotInteriorError(AlamError):
    """The point is not strictly inside the sublevel set along any direction."""


class HullMembershipError(AlamError):
    """The boundary datum lies outside the computed hull."""


class StarShapeError(AlamError):
    """The hull cloud is not star shaped about the chosen centre."""


class ValueMismatchError(InputError):
    """Pattern exterior value plus shift differs from the ambient value."""


class CloudSizeError(AlamError):
    """Hull cloud exceeded its configured cap."""
