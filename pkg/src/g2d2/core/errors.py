"""Exception hierarchy shared by the numerical core, the runner and the CLI."""
from __future__ import annotations

from typing import Any, Dict, Optional


class G2D2Error(Exception):
    """Base class for every error raised by this package."""


class ScheduleError(G2D2Error, ValueError):
    """Invalid transition schedule endpoints, steps or tokens."""


class EnumerationLimitError(G2D2Error, ValueError):
    """A brute-force enumeration would exceed the configured state-space guard."""

    def __init__(self, what: str, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(
            f"{what} requires enumerating {size} states, above the limit of {limit}."
        )


class NonFiniteError(G2D2Error, FloatingPointError):
    """A loss, gradient or probability became NaN or infinite."""

    def __init__(self, message: str, state: Optional[Dict[str, Any]] = None):
        self.state = state or {}
        super().__init__(message)


class ConfigError(G2D2Error, ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
