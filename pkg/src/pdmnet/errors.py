"""Exception hierarchy shared by all pdmnet modules."""


class PDMError(Exception):
    """Base class for every error raised by pdmnet."""


class LoadError(PDMError, ValueError):
    """A price file could not be parsed."""


class EmptyPanelError(PDMError, ValueError):
    pass


class DegenerateSeriesError(PDMError, ValueError):
    """A series has zero variance where a positive one is required."""

    def __init__(self, message, entity=None):
        super().__init__(message)
        self.entity = entity


class ReturnComputationError(PDMError, ArithmeticError):
    pass


class NumericError(PDMError, ArithmeticError):
    """An eigensolver or linear solve did not converge."""


class DegenerateEmbeddingError(PDMError, ValueError):
    pass


class PartitioningFailure(PDMError):
    """The residual correlation structure is indistinguishable from the GE null.

    Raised when the first level of the hierarchy has fewer than two
    significant Laplacian eigenvalues.
    """

    def __init__(self, count, threshold, message=None):
        self.count = int(count)
        self.threshold = float(threshold)
        super().__init__(
            message
            or f"{self.count} significant eigenvalue(s) below GE threshold "
            f"{self.threshold:.6g}; need at least 2"
        )


class ScrubFailure(PDMError):
    """Partition scrubbing could not produce a residual panel.

    ``kind`` is ``"ProjectionFailure"`` when the characteristic series are
    numerically linearly dependent, ``"DegenerateCluster"`` when a
    characteristic series or a residual row has zero variance.
    """

    PROJECTION = "ProjectionFailure"
    DEGENERATE = "DegenerateCluster"

    def __init__(self, kind, detail, indices=(), condition_estimate=None):
        if kind not in (self.PROJECTION, self.DEGENERATE):
            raise ValueError(f"unknown scrub failure kind {kind!r}")
        self.kind = kind
        self.detail = detail
        self.indices = tuple(int(i) for i in indices)
        self.condition_estimate = condition_estimate
        super().__init__(f"{kind}: {detail}")


class LevelOutOfRange(PDMError, IndexError):
    def __init__(self, iteration, requested, available):
        self.iteration = iteration
        self.requested = requested
        self.available = available
        super().__init__(
            f"iteration {iteration}: level {requested} requested but only "
            f"{available} level(s) available"
        )


class IncompleteRecordError(PDMError, ValueError):
    pass


class UninvertibleRecordError(PDMError, ValueError):
    pass
