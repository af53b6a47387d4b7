"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes disagree with an operation's contract."""


class SchemaError(ValueError):
    """Feature schema violated: bad slot layout, missing column, wrong party."""


class VocabBoundsError(IndexError):
    """A hashed feature index fell outside its slot's vocabulary."""


class CacheError(RuntimeError):
    """A backward pass received a stale or mismatched forward cache."""


class NonFiniteError(ArithmeticError):
    """A public numeric operation produced NaN or Inf."""


class ProtocolError(RuntimeError):
    """Cross-party message discipline violated (missing, duplicate, or
    out-of-order message, or a payload of unexpected width)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value; message names the key path."""


class DataError(ValueError):
    """Row-level problem while ingesting data (bad label, malformed row)."""


class CheckpointError(RuntimeError):
    """Checkpoint file corrupt, truncated, or incompatible with the config."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""
