"""Failure taxonomy: transaction, system, media, and single-page failures."""

from __future__ import annotations

import enum


class FailureClass(enum.Enum):
    TRANSACTION = "transaction"
    SYSTEM = "system"
    MEDIA = "media"
    SINGLE_PAGE = "single_page"


class DetectedFailure(Exception):
    """A page read that failed verification and must not be used as-is.

    ``cause`` is one of: checksum_mismatch, wrong_page_id, io_error,
    fence_mismatch, stale_page_lsn.
    """

    def __init__(self, page_id: int, cause: str,
                 failure_class: FailureClass = FailureClass.SINGLE_PAGE):
        super().__init__(f"page {page_id}: {cause}")
        self.page_id = page_id
        self.cause = cause
        self.failure_class = failure_class


class MediaFailure(Exception):
    """Escalation target when single-page recovery inputs are missing."""

    def __init__(self, reason: str, page_id: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.page_id = page_id


class SystemFailureError(Exception):
    """Log device errors and other failures that require a restart."""


class UsageError(Exception):
    """Caller broke an API precondition (not a storage failure)."""
