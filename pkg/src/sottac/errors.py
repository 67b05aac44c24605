"""Shared exception types."""


class InvalidActionError(ValueError):
    """An action outside the environment's action space was supplied."""


class NumericError(RuntimeError):
    """A computation produced non-finite values; carries diagnostics."""
