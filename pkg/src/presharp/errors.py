"""Exception hierarchy shared by every module.

ConfigError maps to CLI exit code 2 and DataError (with its subclasses) to exit code 3.
"""


class PresharpError(Exception):
    pass


class ConfigError(PresharpError, ValueError):
    """Bad arguments, spec keys or missing checkpoints."""


class DataError(PresharpError, ValueError):
    """Input data that cannot be decoded or is internally inconsistent."""


class FormatError(DataError):
    pass


class TruncationError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class DomainError(PresharpError, ValueError):
    """Non-finite values where finite pixels are required."""


class ShapeError(PresharpError, ValueError):
    pass
