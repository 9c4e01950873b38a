"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit 1, data
problems exit 2 and numeric failures exit 3.
"""


class KIGANError(Exception):
    exit_code = 1


class ConfigError(KIGANError):
    exit_code = 1


class DataError(KIGANError):
    exit_code = 2


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AgentClassError(DataError):
    pass


class SignalCodeError(DataError):
    pass


class SignalConflictError(DataError):
    pass


class CoverageError(DataError):
    pass


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class NumericError(KIGANError):
    exit_code = 3


class DimensionError(NumericError, ValueError):
    pass


class NonFiniteError(NumericError, FloatingPointError):
    def __init__(self, op, detail=""):
        msg = f"non-finite value produced by {op}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op


class EmptyInputError(NumericError, ValueError):
    pass
