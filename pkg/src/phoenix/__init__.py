"""phoenix: a miniature transactional page store with single-page failure recovery.

The store keeps a slotted page file, a write-ahead log with per-transaction
and per-page backward chains, a buffer pool, a page recovery index mapping
page-id ranges to backup locators, and a Foster B-tree whose fence keys make
structural corruption detectable on every root-to-leaf pass.  A failed page
read is repaired from its newest backup plus a LIFO replay of its per-page
log chain, while the rest of the system keeps running.
"""

from phoenix.engine import Store, StoreConfig
from phoenix.errors import (
    DetectedFailure,
    FailureClass,
    MediaFailure,
    UsageError,
)

__all__ = [
    "Store",
    "StoreConfig",
    "DetectedFailure",
    "FailureClass",
    "MediaFailure",
    "UsageError",
]
