"""Exception hierarchy shared by every module."""


class GnnEncoderError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GnnEncoderError, ValueError):
    """Invalid configuration value or file."""


class DimensionError(GnnEncoderError, ValueError):
    """Array shapes do not line up."""

    def __init__(self, what: str, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class NumericError(GnnEncoderError):
    """Non-finite values, divergence or a failed gradient check."""


class DataError(GnnEncoderError):
    """Malformed or inconsistent corpus, qrels, run or triples data."""


class GraphError(GnnEncoderError):
    """Invalid graph construction or a missing forward cache."""


class StaleIndexError(GnnEncoderError):
    """Passage index was built by a different query encoder."""


class CheckpointError(GnnEncoderError):
    """Checkpoint could not be read."""

    code = 0


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""

    code = 1


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""

    code = 2


class CheckpointFingerprintError(CheckpointError):
    """Content hash does not match (corruption or truncation)."""

    code = 3
