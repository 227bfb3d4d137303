"""Exception types shared across the package.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line failure message.
"""

from __future__ import annotations


class DrlError(Exception):
    category = "error"


class DimensionError(DrlError, ValueError):
    category = "dimension"


class DomainError(DrlError, ValueError):
    category = "domain"


class ContractError(DrlError, ValueError):
    category = "contract"


class NumericError(DrlError, ArithmeticError):
    category = "numeric"


class ConfigError(DrlError, ValueError):
    category = "config"


class TrainingError(NumericError):
    """Raised when training diverges; ``history`` holds the epochs completed so far."""

    category = "training"

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class SplitError(DrlError, ValueError):
    category = "split"


class SearchError(DrlError, RuntimeError):
    category = "search"


class FormatError(DrlError, ValueError):
    category = "format"
