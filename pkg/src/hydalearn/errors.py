"""Exception types shared across the package."""


class HydaError(Exception):
    """Base class for all package errors."""


class ShapeError(HydaError, ValueError):
    """Operand shapes do not conform."""


class DomainError(HydaError, ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(HydaError, RuntimeError):
    """A caller violated an ordering or state contract (stale cache, bad snapshot)."""


class DegenerateMetricError(HydaError, ValueError):
    """A metric is undefined for the given targets (e.g. single-class AUC)."""


class StrategyError(HydaError, RuntimeError):
    """A weighting strategy could not produce weights for this step."""


class ConfigError(HydaError, ValueError):
    """Invalid or inconsistent configuration."""


class SchemaError(ConfigError):
    """A CSV schema does not match the file it describes."""


class TrainingDiverged(HydaError, FloatingPointError):
    """A loss became non-finite during training."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
