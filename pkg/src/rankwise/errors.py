"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RankwiseError(Exception):
    """Base class for all package errors."""


class TransportError(RankwiseError):
    """Backend unreachable, or retryable failures exhausted the retry budget."""

    def __init__(self, message: str, request_id: str | None = None, attempts: int = 1):
        super().__init__(message)
        self.request_id = request_id
        self.attempts = attempts


class ProtocolError(RankwiseError):
    """Backend answered with a non-retryable HTTP status or an unusable body."""

    def __init__(self, message: str, request_id: str | None = None, status: int | None = None):
        super().__init__(message)
        self.request_id = request_id
        self.status = status


class DatasetError(RankwiseError):
    """A dataset file failed validation; names file and line."""

    def __init__(self, path: str, line_no: int | None, reason: str):
        loc = f"{path}:{line_no}" if line_no is not None else path
        super().__init__(f"{loc}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class RerankError(RankwiseError):
    """A query could not be reranked; carries the partial trace collected so far."""

    def __init__(self, qid: str, cause: Exception, trace=None):
        super().__init__(f"rerank failed for query {qid!r}: {cause}")
        self.qid = qid
        self.cause = cause
        self.trace = trace


class RecordSkipped(RankwiseError):
    """A synthesis input record was skipped; `reason` is a short machine tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
