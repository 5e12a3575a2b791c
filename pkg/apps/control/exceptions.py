"""Errors raised by the control toolkit."""


class NonConvergence(Exception):
    """A nonlinear or linear solve stopped before reaching its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LineSearchFailure(Exception):
    """Armijo backtracking found no acceptable step."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(Exception):
    """A run configuration failed validation."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        # "path (line N): message" strings
        self.errors = errors or []
