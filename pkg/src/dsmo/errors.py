"""Exception types raised across the package."""


class DSMOError(Exception):
    """Base class for all package errors."""


class InvalidParam(DSMOError, ValueError):
    pass


class ConnectivityFailure(DSMOError):
    pass


class SchemeMismatch(DSMOError, ValueError):
    pass


class DimensionMismatch(DSMOError, ValueError):
    pass


class SpectrumViolation(DSMOError):
    pass


class ParseError(DSMOError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class EmptyShard(DSMOError, ValueError):
    pass


class NoExactOracle(DSMOError):
    pass


class NotBilevel(DSMOError, ValueError):
    pass


class NotCompositional(DSMOError, ValueError):
    pass


class InsufficientData(DSMOError, ValueError):
    pass


class NonPositiveValue(DSMOError, ValueError):
    pass


class SchemaError(DSMOError, ValueError):
    pass


class ConfigError(DSMOError, ValueError):
    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class InvariantViolation(DSMOError):
    pass
