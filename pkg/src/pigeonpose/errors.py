"""Exception hierarchy.

Everything raised for bad *input* derives from :class:`PoseToolkitError`; the
CLI maps those to exit code 1. :class:`InvariantViolation` signals a bug in
this package and maps to exit code 2.
"""


class PoseToolkitError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


# geometry
class CalibrationError(PoseToolkitError):
    pass


class PointBehindCamera(PoseToolkitError):
    pass


class InsufficientViews(PoseToolkitError):
    pass


class DegenerateGeometry(PoseToolkitError):
    pass


class SchemaMismatch(PoseToolkitError):
    pass


# silhouette
class EmptyIntersection(PoseToolkitError):
    pass


class EmptyMask(PoseToolkitError):
    pass


class MaskDecodeError(PoseToolkitError):
    pass


# matching
class NoCalibration(PoseToolkitError):
    pass


class SingleView(PoseToolkitError):
    pass


# tracking
class NonFiniteDetection(PoseToolkitError):
    pass


class AssignmentMismatch(PoseToolkitError):
    pass


# disambiguation
class TooManyViews(PoseToolkitError):
    pass


# metrics
class NoValidKeypoints(PoseToolkitError):
    pass


class MissingBBox(PoseToolkitError):
    pass


class DegenerateScale(PoseToolkitError):
    pass


# synthetic / pipeline
class InvalidConfig(PoseToolkitError):
    pass


class FormatError(PoseToolkitError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
