"""Exception types shared across the package.

Each carries an ``exit_code`` so the command line can map failures to
distinct process exit statuses.
"""


class MoExtError(Exception):
    exit_code = 1


class ManifestParseError(MoExtError):
    exit_code = 4

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(MoExtError):
    exit_code = 4


class ConfigError(MoExtError):
    exit_code = 4


class MissingFileError(MoExtError):
    exit_code = 3


class MissingDatasetError(MoExtError):
    exit_code = 5


class LandmarkDetectionError(MoExtError):
    exit_code = 6


class ArchitectureError(MoExtError):
    exit_code = 7


class NumericError(MoExtError):
    exit_code = 8


class CheckpointError(MoExtError):
    exit_code = 9


class TrainingDivergedError(NumericError):
    """Raised when a loss turns non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
