"""Exception types shared across the package, plus CLI exit codes."""


class ClassILError(Exception):
    """Base class for every error raised by this package."""


class DataFormatError(ClassILError):
    """A dataset or artifact file is missing, malformed, or inconsistent."""


class ConfigError(ClassILError):
    """Invalid argument, experiment configuration, or training spec."""


class ShapeError(ConfigError):
    """Array dimensions do not match what an operation requires."""


class IntegrityError(ClassILError):
    """Stored artifacts are incomplete, corrupted, or would be mutated."""


class DegenerateInputError(ClassILError):
    """Numeric input outside an operation's domain (e.g. zero-variance row)."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3
EXIT_NUMERIC = 4
