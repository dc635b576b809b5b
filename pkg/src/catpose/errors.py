class CatposeError(Exception):
    ...


# assets
class MalformedFileError(CatposeError, ValueError):
    ...


class EmptyMeshError(MalformedFileError):
    ...


class DegenerateExtentError(CatposeError, ValueError):
    ...


# views
class InvalidCountError(CatposeError, ValueError):
    ...


class InvalidConfigError(CatposeError, ValueError):
    ...


class DegenerateViewError(CatposeError, ValueError):
    """Camera position coincides with the look-at target."""


# rendering
class DimensionMismatchError(CatposeError, ValueError):
    ...


# templates
class RadiusTooLargeError(CatposeError, ValueError):
    ...


class InvalidKError(CatposeError, ValueError):
    ...


# dataset io
class DepthOutOfRangeError(CatposeError, ValueError):
    ...


class MissingFileError(CatposeError, FileNotFoundError):
    ...


class SchemaMismatchError(CatposeError, ValueError):
    ...


class CorruptPayloadError(CatposeError, OSError):
    ...


# metrics
class EmptyInputError(CatposeError, ValueError):
    ...


# estimation
class TooFewPointsError(CatposeError, ValueError):
    ...


class NoConvergenceError(CatposeError):
    ...


class DegenerateConfigurationError(CatposeError, ValueError):
    ...


class UnknownEstimatorError(CatposeError, KeyError):
    ...


# instructions / llm
class NonMonotonicRoundsError(CatposeError, ValueError):
    ...


class LlmError(CatposeError):
    ...


class NetworkError(LlmError):
    ...


class AuthError(LlmError):
    ...


class StubMissError(LlmError, KeyError):
    ...


# grasp planning
class WorkspaceViolationError(CatposeError, ValueError):
    ...


class MissingPlaceTargetError(CatposeError, ValueError):
    ...


class MissingGraspError(CatposeError, KeyError):
    ...


class UnknownPhaseError(CatposeError, KeyError):
    ...
