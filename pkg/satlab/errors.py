"""
Exception types shared across satlab.

Input and format problems subclass ValueError so callers that only care about
"bad input" can keep catching ValueError; divergence subclasses
FloatingPointError.
"""

from typing import Optional


class SatlabError(Exception):
    """Base class for all satlab errors."""


class InvalidInputError(SatlabError, ValueError):
    """An operation was called with arguments outside its contract."""


class DatasetFormatError(SatlabError, ValueError):
    """A dataset file does not match its declared binary layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(SatlabError, FloatingPointError):
    """A loss or gradient became non-finite during training."""

    def __init__(
        self,
        message: str,
        epoch: Optional[int] = None,
        batch_index: Optional[int] = None,
    ):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch_index is not None:
            where.append(f"batch {batch_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")
        self.detail = message
        self.epoch = epoch
        self.batch_index = batch_index


class ConfigError(SatlabError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("Invalid configuration: " + "; ".join(self.errors))


class InvariantViolation(SatlabError, AssertionError):
    """A training-loop property check failed (simplex, weight bounds)."""
