"""Exception types shared across the toolkit."""


class RayliftError(Exception):
    """Base class for all raylift errors."""


class SchemaError(RayliftError):
    """Input file or record does not match the documented schema."""


# camera
class NonConvergentError(RayliftError):
    """Iterative unprojection failed to converge (pixel outside the model's range)."""


class BehindCameraError(RayliftError):
    pass


class RayAtHorizonError(RayliftError):
    """Native ray has no forward component and cannot be expressed in a pinhole image."""


class DegenerateComparisonError(RayliftError):
    """Too many grid pixels failed to unproject for a meaningful comparison."""


# solver
class TooFewCorrespondencesError(RayliftError):
    pass


class AllKeypointsMaskedError(RayliftError):
    pass


class DegenerateSystemError(RayliftError):
    """Normal equations stayed ill-conditioned after damping and produced no finite energy."""


# temporal
class EmptyTrajectoryError(RayliftError):
    pass


class LengthMismatchError(RayliftError):
    pass


# farm
class NonPositiveRadiusError(RayliftError):
    pass


class DimensionMismatchError(RayliftError):
    pass


class DegenerateInputError(RayliftError):
    """6D rotation input with zero or parallel basis vectors."""


class NotWatertightError(RayliftError):
    pass


class DegenerateArmError(RayliftError):
    """Elbow and wrist coincide; no attachment direction."""


# fit
class EmptySetError(RayliftError):
    pass


class DegenerateRingError(RayliftError):
    pass


class NonFiniteLossError(RayliftError):
    pass


class InsufficientCorpusError(RayliftError):
    pass


# metrics
class ShapeMismatchError(RayliftError):
    pass


class DegenerateConfigurationError(RayliftError):
    """Point set of rank < 2; similarity alignment is not defined."""


class TooShortError(RayliftError):
    pass


class NotARotationError(RayliftError):
    pass


class JointMissingError(RayliftError):
    pass


# synth
class FovExhaustedError(RayliftError):
    """Could not place a trajectory inside the camera field of view."""


# features
class ZeroAreaCropError(RayliftError):
    pass
