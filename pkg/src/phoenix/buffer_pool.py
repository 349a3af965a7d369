"""Fixed-capacity page cache enforcing the write-ahead rule and the
write -> log-PRI-update -> evict ordering.

The pool itself is mechanism only: page loading (including transparent
single-page recovery) and cleaning (WAL flush, durable write, PRI
maintenance) are injected by the engine as callables, so the pool never
has to know about recovery.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from phoenix.errors import UsageError
from phoenix.pages import Page
from phoenix.wal import NIL_LSN


@dataclass
class Frame:
    page: Page
    pin_count: int = 0
    dirty: bool = False
    recovery_lsn: int = NIL_LSN  # first lsn that dirtied it since last clean


class BufferPool:
    def __init__(self, capacity: int, loader, cleaner):
        """loader(pid) -> Page; cleaner(frame) makes a dirty frame clean
        (WAL flush, durable write, PRI update append) before eviction."""
        self.capacity = capacity
        self.loader = loader
        self.cleaner = cleaner
        self.frames: "OrderedDict[int, Frame]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def fix(self, pid: int) -> Frame:
        frame = self.frames.get(pid)
        if frame is not None:
            self.hits += 1
            self.frames.move_to_end(pid)
            frame.pin_count += 1
            return frame
        self.misses += 1
        page = self.loader(pid)
        if len(self.frames) >= self.capacity:
            self._evict_one()
        frame = Frame(page)
        frame.pin_count = 1
        self.frames[pid] = frame
        return frame

    def unfix(self, frame: Frame):
        if frame.pin_count <= 0:
            raise UsageError("unfix of unpinned frame")
        frame.pin_count -= 1

    def _evict_one(self):
        for pid, frame in self.frames.items():  # LRU order
            if frame.pin_count == 0:
                if frame.dirty:
                    self.cleaner(frame)
                    assert not frame.dirty
                del self.frames[pid]
                self.evictions += 1
                return
        raise UsageError("buffer pool exhausted: all frames pinned")

    def mark_dirty(self, frame: Frame, new_page_lsn: int):
        if new_page_lsn < frame.page.page_lsn:
            raise AssertionError("PageLSN must advance monotonically")
        if not frame.dirty:
            frame.dirty = True
            frame.recovery_lsn = new_page_lsn

    def dirty_pids(self) -> list[int]:
        return [pid for pid, f in self.frames.items() if f.dirty]

    def resident(self, pid: int) -> Frame | None:
        return self.frames.get(pid)

    def install(self, pid: int, page: Page, dirty: bool = False,
                recovery_lsn: int = NIL_LSN) -> Frame:
        """Place a recovered page directly into the pool."""
        if pid in self.frames:
            frame = self.frames[pid]
            frame.page = page
            frame.dirty = dirty
            frame.recovery_lsn = recovery_lsn
            return frame
        if len(self.frames) >= self.capacity:
            self._evict_one()
        frame = Frame(page, dirty=dirty, recovery_lsn=recovery_lsn)
        self.frames[pid] = frame
        return frame

    def drop(self, pid: int):
        """Discard a frame without cleaning (its contents are being
        replaced by recovery)."""
        frame = self.frames.pop(pid, None)
        if frame is not None and frame.pin_count:
            raise UsageError("drop of pinned frame")

    def drop_all(self):
        self.frames.clear()
