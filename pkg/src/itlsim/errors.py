"""Exception types shared across the simulator."""


class ItlError(Exception):
    """Base class for all simulator errors."""


class AlignmentError(ItlError):
    """Parameter sets or tensors do not share names/shapes."""


class ConfigurationError(ItlError):
    """Invalid model or run configuration."""


class DataError(ItlError):
    """Malformed or out-of-range data (labels, batches, files)."""


class NumericalError(ItlError):
    """Non-finite value encountered where finiteness is required."""


class CodecError(ItlError):
    """Checkpoint stream is corrupted, truncated, or version-incompatible."""


class LifecycleError(ItlError):
    """Regularizer artifact consumed out of its legal center order."""


class ValidationError(ItlError):
    """Experiment config failed validation; carries all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
