"""Exception hierarchy shared by every module."""


class InfuqError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(InfuqError, ValueError):
    pass


class UnsupportedActivation(InfuqError, ValueError):
    pass


class NumericalError(InfuqError, ArithmeticError):
    """Numerical failure; the CLI maps these to exit code 2."""


class NotSymmetric(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class SingularGram(NotPSD):
    """Gram matrix could not be factorized even at the largest jitter."""


class Diverged(NumericalError):
    pass


class NumericalArtifactError(NumericalError):
    """A NaN or infinity was about to be written to an artifact."""


class ConfigError(InfuqError, ValueError):
    """Invalid experiment configuration; the CLI maps these to exit code 1."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
