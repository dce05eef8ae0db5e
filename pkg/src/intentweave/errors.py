"""Exception types shared across the toolkit."""

from __future__ import annotations


class IntentweaveError(Exception):
    """Base class for all toolkit errors."""


class ParseError(IntentweaveError):
    """A structured text (file record or model output) could not be parsed.

    ``reason`` is one of ``missing_key``, ``bad_enum``, ``malformed``; ``line``
    carries file-line context when parsing persisted records.
    """

    def __init__(self, message: str, *, reason: str = "malformed", line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.reason = reason
        self.line = line


class InvariantViolation(IntentweaveError):
    """A domain-type invariant failed. ``invariant`` names the failed rule."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class TransportError(IntentweaveError):
    """Retryable network-level failure (timeout, connection reset, 429/5xx)."""


class AuthError(IntentweaveError):
    """Non-retryable credential failure (401/403 or missing credential)."""


class RetriesExhausted(IntentweaveError):
    """Transport retries ran out without a successful response."""


class UnscriptedRequest(IntentweaveError):
    """A mock backend received a request its script does not cover."""


class BudgetExhausted(IntentweaveError):
    """An agent's retry budget ran out without an accepted action."""


class MissingSlot(IntentweaveError):
    """A prompt template slot was not supplied."""


class EmptyDataset(IntentweaveError):
    """A metric was asked to evaluate an empty dataset."""


class InsufficientData(IntentweaveError):
    """Not enough items to run the requested evaluation."""


class UnknownWord(IntentweaveError):
    """A word passed to a co-occurrence metric never occurs in the corpus."""


class ConflictingMerge(IntentweaveError):
    """A merge references an intent that is no longer active."""


class DegenerateData(IntentweaveError):
    """Training data cannot support a classifier (single label, too few rows)."""
