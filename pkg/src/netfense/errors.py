"""Exception types. Each carries the CLI exit code it maps to."""


class NetfenseError(Exception):
    exit_code = 1


class ConfigError(NetfenseError, ValueError):
    exit_code = 2


class DataError(NetfenseError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class ShapeError(DataError):
    pass


class StateError(NetfenseError, ValueError):
    """An edge flip inconsistent with the current adjacency."""

    exit_code = 3


class NumericError(NetfenseError, ArithmeticError):
    exit_code = 4


class DegeneratePerturbation(NumericError):
    pass
