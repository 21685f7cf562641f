"""Exceptions raised by quantrbp."""
from typing import Any, Dict, Mapping, Optional

__all__ = [
    "QuantRbpError",
    "InvalidParameterError",
    "InvalidVarianceError",
    "InvalidInputError",
    "DomainError",
    "InvalidStateError",
    "QuadratureError",
    "DesignFailureError",
    "ReconstructionError",
    "ConfigurationError",
]


class QuantRbpError(Exception):
    """
    Base class for every error raised by this package.

    Args:
        message: Human readable description of the failure.
        diagnostics: Optional machine readable details, serialized as-is by the CLI.
    """

    def __init__(
        self, message: str, *, diagnostics: Optional[Mapping[str, Any]] = None
    ) -> None:
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class InvalidParameterError(QuantRbpError, ValueError):
    pass


class InvalidVarianceError(InvalidParameterError):
    pass


class InvalidInputError(InvalidParameterError):
    pass


class DomainError(InvalidParameterError):
    """Ē_out was asked for a variance outside (0, β·τ_init]."""


class InvalidStateError(QuantRbpError):
    pass


class QuadratureError(QuantRbpError):
    pass


class DesignFailureError(QuantRbpError):
    pass


class ReconstructionError(QuantRbpError):
    pass


class ConfigurationError(QuantRbpError):
    pass
