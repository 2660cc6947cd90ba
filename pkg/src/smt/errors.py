"""Exception classes shared across the package."""


class SmtError(Exception):
    """Base class for all library errors."""


class NonSymmetric(SmtError):
    pass


class NonFinite(SmtError):
    pass


class NotPositiveDefinite(SmtError):
    pass


class EmptyBatch(SmtError):
    pass


class DimensionMismatch(SmtError):
    pass


class MaxIterationsExceeded(SmtError):
    pass


class DegenerateNeighborhood(SmtError):
    pass


class ZeroDimension(SmtError):
    pass


class EmptySource(SmtError):
    pass


class ChunkTooShort(SmtError):
    pass


class InsufficientTimepoints(SmtError):
    pass


class RankCollapse(SmtError):
    pass


class LayerOutOfRange(SmtError):
    pass


class BadMagic(SmtError):
    pass


class VersionMismatch(SmtError):
    pass


class TruncatedFile(SmtError):
    pass


class ChecksumMismatch(SmtError):
    pass


class SizeMismatch(SmtError):
    pass


class EmptyStream(SmtError):
    pass


class ZeroColumn(SmtError):
    pass


class ZeroElement(SmtError):
    pass


class InsufficientWellFit(SmtError):
    pass
