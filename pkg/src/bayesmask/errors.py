"""Exception hierarchy shared across the package."""


class BayesmaskError(Exception):
    """Base class for all package errors."""


class DimensionError(BayesmaskError, ValueError):
    """Shapes of tensors, masks, or score vectors do not line up."""


class DomainError(BayesmaskError, ValueError):
    """A value is outside the domain an operation is defined on."""


class ConfigError(BayesmaskError, ValueError):
    """Invalid or inconsistent configuration."""


class BudgetExhaustedError(BayesmaskError):
    """The oracle's query budget is spent; no score was delivered."""

    def __init__(self, limit: int):
        super().__init__(f"query budget exhausted (limit={limit})")
        self.limit = limit


class TransportError(BayesmaskError):
    """A remote oracle could not be reached after bounded retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BayesmaskError):
    """A remote oracle answered with a malformed or unparseable response."""
