"""Exception types shared across the package."""


class TokenCurveError(Exception):
    """Base class for every error raised by tokencurve."""


class InvalidThresholdError(TokenCurveError, ValueError):
    pass


class DomainError(TokenCurveError, ValueError):
    pass


class InsufficientDataError(TokenCurveError, ValueError):
    pass


class InvalidCurveError(TokenCurveError, ValueError):
    pass


class EmptyInputError(TokenCurveError, ValueError):
    pass


class ConfigError(TokenCurveError, ValueError):
    pass


class InfeasibleCapError(TokenCurveError, ValueError):
    pass


class InvalidDAGError(TokenCurveError, ValueError):
    pass


class ShapeError(TokenCurveError, ValueError):
    pass


class InsufficientGridError(TokenCurveError, ValueError):
    pass


class TrainingDivergedError(TokenCurveError, RuntimeError):
    pass


class InfeasibleSelectionError(TokenCurveError, ValueError):
    def __init__(self, message: str, deficits: dict | None = None):
        super().__init__(message)
        self.deficits = deficits or {}


class VersionError(TokenCurveError, ValueError):
    pass


class ParseError(TokenCurveError, ValueError):
    """Malformed input record; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
