"""Exception hierarchy shared by all modules."""


class MetspaceError(ValueError):
    """Base class for every error raised by metspace."""


class NonFinite(MetspaceError):
    pass


class NotPositiveDefinite(MetspaceError):
    pass


class TooSingular(MetspaceError):
    pass


class EmptyRegion(MetspaceError):
    pass


class FormatError(MetspaceError):
    """Malformed ``.rmf`` file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ChecksumMismatch(FormatError):
    pass


class ChartMismatch(MetspaceError):
    pass


class AllSingular(MetspaceError):
    pass


class NotInSameComponent(MetspaceError):
    pass


class NotCauchy(MetspaceError):
    """Sequence fails the tail test; ``pair`` holds the offending indices."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class EpsilonTooLarge(MetspaceError):
    pass


class SourceSingular(MetspaceError):
    pass


class ImageOutOfChart(MetspaceError):
    pass


class SingularCell(MetspaceError):
    pass


class NotSymmetric(MetspaceError):
    pass


class SolverDivergence(MetspaceError):
    pass


class NonPositiveKernel(MetspaceError):
    pass


class BallTooSmall(MetspaceError):
    pass


class DimensionError(MetspaceError):
    pass
