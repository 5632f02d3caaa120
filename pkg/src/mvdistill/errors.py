"""Exception types shared across the pipeline."""


class MvdError(Exception):
    """Base class for all library errors."""


class DegenerateCloud(MvdError):
    """All points coincide; the cloud has no bounding radius."""


class UnsupportedCount(MvdError):
    """A rig preset was requested with a view count it does not define."""


class PointAtViewpoint(MvdError):
    """A point lies (numerically) at the viewpoint; flipping is undefined."""


class RadiusTooSmall(MvdError):
    """Flip radius is smaller than the farthest point distance."""


class DegenerateHull(MvdError):
    """Input points are affinely dependent (rank < 3)."""

    def __init__(self, rank: int):
        super().__init__(f"point set is affinely dependent (rank {rank})")
        self.rank = rank


class ShapeMismatch(MvdError):
    """Tensor operands have incompatible shapes."""


class EmptyInput(MvdError):
    """An operation that needs at least one row received none."""


class LabelOutOfRange(MvdError):
    """A class label falls outside [0, num_classes)."""


class NonFiniteLoss(MvdError):
    """A NaN or Inf appeared in a tensor or loss value."""


class IndexOutOfRange(MvdError):
    """A mask or gather index exceeds the available rows."""


class MissingTeacher(MvdError):
    """No teacher knowledge file exists for a training shape."""


class MissingTeacherField(MvdError):
    """Teacher knowledge lacks the field needed by the distillation mode."""


class ParseError(MvdError):
    """A text input file is malformed."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class BadMagic(MvdError):
    """A binary file does not start with the expected magic bytes."""


class UnsupportedVersion(MvdError):
    """A binary file carries a version this reader does not understand."""


class TruncatedFile(MvdError):
    """A binary file ended before its declared payload."""
