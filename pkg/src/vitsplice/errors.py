"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class GraphStateError(RuntimeError):
    """Backward was requested without a recorded forward graph."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during computation."""


class TilingError(ValueError):
    """Image dimensions are incompatible with the requested tiling."""


class DataError(ValueError):
    """An input file is missing, truncated or malformed."""


class CheckpointError(DataError):
    """A checkpoint failed validation (checksum, version, shapes)."""
