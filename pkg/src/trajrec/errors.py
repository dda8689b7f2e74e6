"""Exception hierarchy shared across the package."""


class TrajrecError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(TrajrecError, ValueError):
    """Operands with incompatible shapes. Message names both shapes."""


class DomainError(TrajrecError, ValueError):
    """Input outside an operation's documented domain."""


class ContractError(TrajrecError, RuntimeError):
    """A caller violated a documented precondition."""


class FormatError(TrajrecError, ValueError):
    """Malformed input file content."""


class RangeError(TrajrecError, ValueError):
    """Coordinate outside the configured grid extent."""


class UnmatchedPointError(TrajrecError, RuntimeError):
    """A trajectory point with no map-match candidate in range."""

    def __init__(self, point_index: int, message: str | None = None):
        self.point_index = point_index
        super().__init__(message or f"no candidate segment for point {point_index}")


class ConfigError(TrajrecError, ValueError):
    """Invalid run configuration."""
