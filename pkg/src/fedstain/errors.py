"""Exception types shared across the package."""


class FedStainError(Exception):
    """Base class for all package-specific errors."""


class ConstantChannelError(FedStainError):
    """A channel has zero spread, so standardized moments are undefined."""

    def __init__(self, channels):
        self.channels = tuple(channels)
        super().__init__(f"constant channel(s): {self.channels}")


class ConstantChannelWarning(UserWarning):
    """Emitted when a degenerate channel is patched with fallback statistics."""


class InvalidWindowError(FedStainError):
    """Local-statistic window does not fit inside the image."""


class DegenerateInputError(FedStainError):
    """Input sample has zero spread and cannot be analyzed."""


class EmptyPoolError(FedStainError):
    """Augmentation asked for pool statistics but the view is empty."""


class UnknownClientError(FedStainError):
    """A message referenced a client that is not on the round roster."""


class StaleMessageError(FedStainError):
    """A message arrived tagged with a round other than the current one."""


class EmptyRoundError(FedStainError):
    """Aggregation was requested with zero parameter uploads."""


class ProtocolError(FedStainError):
    """A client or server attempted an out-of-order phase transition."""


class ShapeMismatchError(FedStainError):
    """Batch shape does not match the configured model input."""


class NonFiniteLossError(FedStainError):
    """A loss term became non-finite during training."""

    def __init__(self, term, value):
        self.term = term
        self.value = value
        super().__init__(f"non-finite loss term '{term}' = {value}")


class NoPositivesError(FedStainError):
    """Every contrastive anchor had an empty positive set."""


class PartitionInfeasibleError(FedStainError):
    """Non-IID partitioning failed to satisfy constraints after retries."""


class InfeasibleShapeError(FedStainError):
    """Target (skewness, kurtosis) violates the moment inequality or is
    unreachable by the generator's shape family."""


class ImageTooSmallError(FedStainError):
    """Source image is smaller than the requested patch size."""


class CheckpointError(FedStainError):
    """Checkpoint payload is corrupt or does not match the model layout."""


class ConfigError(FedStainError):
    """Run configuration failed to parse or validate."""
