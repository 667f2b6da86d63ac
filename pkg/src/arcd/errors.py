"""Exception types shared across the package."""


class ArcdError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ArcdError, ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(ArcdError, ValueError):
    """Invalid training configuration (file or field values)."""


class CheckpointError(ArcdError, ValueError):
    """Checkpoint stream does not match the model architecture."""


class PnmParseError(ArcdError, ValueError):
    """Malformed PGM/PPM stream; message carries the byte offset."""


class DataError(ArcdError, ValueError):
    """Dataset directory or sample is invalid."""


class NumericalError(ArcdError, ValueError):
    """Non-finite values where the computation requires finite ones."""


class OptimizerError(ArcdError, RuntimeError):
    """Optimizer step cannot proceed (missing or non-finite gradient)."""


class TrainingDiverged(ArcdError, RuntimeError):
    """Training aborted on a non-finite loss; last-good checkpoint kept."""
