"""Exception types raised across the package."""


class ForeClassNetError(Exception):
    pass


class DimensionError(ForeClassNetError, ValueError):
    pass


class DomainError(ForeClassNetError, ValueError):
    pass


class ContractError(ForeClassNetError, ValueError):
    pass


class NonFiniteGradientError(ForeClassNetError, FloatingPointError):
    pass


class UnsupportedLengthError(ForeClassNetError, ValueError):
    pass


class UninitializedAccumulatorError(ForeClassNetError, LookupError):
    pass


class DivergenceError(ForeClassNetError, ArithmeticError):
    pass


class InsufficientDataError(ForeClassNetError, ValueError):
    pass


class ConfigError(ForeClassNetError, ValueError):
    pass


class SequencingError(ForeClassNetError, RuntimeError):
    pass


class ChecksumError(ForeClassNetError, ValueError):
    pass


class UnsupportedVersionError(ForeClassNetError, ValueError):
    pass


class ShapeMismatchError(DimensionError):
    pass


class MalformedRowError(ForeClassNetError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
