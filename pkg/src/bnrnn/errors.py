"""Exception types shared across the library."""


class BnrnnError(Exception):
    """Base class for all library errors."""


class DimensionError(BnrnnError):
    """Tensor shapes are incompatible with the requested operation."""


class DegenerateInputError(BnrnnError):
    """An operation received an empty or otherwise degenerate input."""


class ConfigurationError(BnrnnError):
    """A model or layer is mis-configured (e.g. BN placement without a BN layer)."""


class StateError(BnrnnError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class MissingStatisticsError(BnrnnError):
    """Inference-mode BN was asked for statistics that were never recorded."""


class IngestionError(BnrnnError):
    """A corpus or dataset could not be loaded or batched."""


class IntegrityError(BnrnnError):
    """A checkpoint file is corrupt, truncated, or of an unknown version."""


class SpecValidationError(BnrnnError):
    """A run spec violates one or more constraints.

    Carries the full list of violations so the user sees every problem at once.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
