"""Exception types shared across the package."""


class SkewlabError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SkewlabError, ValueError):
    """A constructed object violates one of its invariants."""


class InvalidSkew(ValidationError):
    """Skew parameter outside the open interval (-1, 1)."""


class NoBracket(SkewlabError):
    """A monotone inversion could not bracket the requested value
    within the configured search interval."""


class QuadratureFailure(SkewlabError):
    """Adaptive quadrature could not reach the requested tolerance
    within its subdivision budget."""


class NonFiniteState(SkewlabError):
    """A simulated state became NaN or infinite."""


class BandwidthTooSmall(ValidationError):
    """Local-time bandwidth below the one-step displacement scale;
    the occupation estimator would be pure noise."""


class StepTooCoarse(ValidationError):
    """Time step too large to resolve the epsilon-scale drift layer."""


class ConfigError(SkewlabError, ValueError):
    """Invalid configuration document; message carries the field path."""


class ExprError(SkewlabError):
    """Base class for expression-language errors, with source position."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, column {col}: {message}"
        super().__init__(message)


class ExprSyntaxError(ExprError):
    def __init__(self, message, line=None, col=None, expected=()):
        self.expected = tuple(expected)
        if self.expected:
            message = f"{message}; expected one of: {', '.join(self.expected)}"
        super().__init__(message, line, col)


class ExprEvalError(ExprError):
    """Evaluation hit a rejected operation (division by zero, 0^negative,
    unbound name)."""
