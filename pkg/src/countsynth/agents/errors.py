"""Shared error types for the agent models."""


class FitError(RuntimeError):
    """An agent fit failed to converge; carries the best-found fit if any."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class IdentifiabilityError(RuntimeError):
    """The model is not identified on the given data (singular information)."""
