"""Page recovery index (PRI): ordered, range-compressed map from page ids
to (backup locator, last PageLSN).

An entry covers a page-id range [lo, hi).  Its locator names the newest
backup of every page in the range: an explicit backup page (with slot
arithmetic for ranges), the page-format log record, or a full page image
in the log.  ``last_lsn`` is nil (0) iff the page has not been updated
since that backup; while a page is resident and dirty the entry may lag.

The whole index is mirrored in memory; durable PRI pages carry serialized
snapshots written at checkpoints, split into two pieces so that no PRI
page stores the entry covering itself.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

from phoenix.disk import Disk
from phoenix.errors import DetectedFailure, MediaFailure, UsageError
from phoenix.pages import Page, page_from_bytes

BACKUP_FILE = "backup.db"
BACKUP_MAGIC = b"PPHB"
BACKUP_HEADER_SIZE = 16

TAG_BACKUP_PAGE = 1     # value = backup slot of entry.lo (ranged arithmetic)
TAG_FORMAT_RECORD = 2   # value = lsn of the page_format record
TAG_IN_LOG_IMAGE = 3    # value = lsn of the page_image record

NIL = 0

_ENTRY = struct.Struct("<QQBQQQ")  # lo, hi, tag, value, backup_lsn, last_lsn


@dataclass
class PriEntry:
    lo: int
    hi: int
    tag: int
    value: int
    backup_lsn: int    # exact PageLSN inside the image; 0 = unknown (ranged)
    last_lsn: int      # 0 = nil: no update since the backup

    def slot_for(self, pid: int) -> int:
        assert self.tag == TAG_BACKUP_PAGE
        return self.value + (pid - self.lo)

    def locator_tuple(self) -> tuple[int, int, int]:
        return (self.tag, self.value, self.backup_lsn)

    def copy(self) -> "PriEntry":
        return PriEntry(self.lo, self.hi, self.tag, self.value,
                        self.backup_lsn, self.last_lsn)


class RecoveryIndex:
    """In-memory mirror of the PRI.  ``log_fn``, when set, appends a
    pri_update record for every mutation (it is None during replay)."""

    def __init__(self):
        self.entries: list[PriEntry] = []
        self.log_fn = None  # callable(pid, page_lsn, range_hi, is_write, locator)

    # -- lookup ------------------------------------------------------------

    def _index_of(self, pid: int) -> int:
        i = bisect_right(self.entries, pid, key=lambda e: e.lo) - 1
        if i < 0 or not (self.entries[i].lo <= pid < self.entries[i].hi):
            raise MediaFailure(f"no PRI entry covers page {pid}", pid)
        return i

    def lookup(self, pid: int) -> PriEntry:
        return self.entries[self._index_of(pid)]

    def verify_on_read(self, pid: int, page_lsn_on_page: int) -> str:
        """PageLSN cross-check on a buffer fault (never for resident
        pages).  With no update since the backup, the expected PageLSN is
        the one inside the backup image, when the entry knows it (ranged
        backups of cold pages do not record per-page values)."""
        entry = self.lookup(pid)
        if entry.last_lsn != NIL:
            return "ok" if entry.last_lsn == page_lsn_on_page \
                else "suspect_stale"
        if entry.backup_lsn != NIL and entry.hi - entry.lo == 1:
            return "ok" if entry.backup_lsn == page_lsn_on_page \
                else "suspect_stale"
        return "ok"

    # -- mutation ----------------------------------------------------------

    def _split_at(self, pid: int):
        """Ensure an entry boundary at pid."""
        if pid >= self.cover_hi():
            return
        i = self._index_of(pid)
        e = self.entries[i]
        if e.lo == pid:
            return
        left = e.copy()
        left.hi = pid
        right = e.copy()
        right.lo = pid
        if e.tag == TAG_BACKUP_PAGE:
            right.value = e.value + (pid - e.lo)
        self.entries[i:i + 1] = [left, right]

    def _isolate(self, pid: int) -> PriEntry:
        self._split_at(pid)
        self._split_at(pid + 1)
        return self.entries[self._index_of(pid)]

    def record_write(self, pid: int, page_lsn: int) -> None:
        """A durable write of pid at page_lsn completed (logged after
        the write, before the frame may be evicted)."""
        e = self._isolate(pid)
        e.last_lsn = page_lsn
        if self.log_fn:
            self.log_fn(pid, page_lsn, pid + 1, True, None)

    def record_backup(self, lo: int, hi: int, tag: int, value: int,
                      backup_lsn: int) -> list[tuple[int, int, int, int]]:
        """Install a new backup locator for [lo, hi); reset last_lsn.

        Returns the displaced locators as (lo, hi, tag, value) pieces so
        the backup store can free old slots only after the new locator is
        installed."""
        if hi > self.cover_hi():
            # id-space extension (sequential allocation keeps this gapless)
            gap_lo = self.cover_hi()
            assert lo <= gap_lo, "allocation gap in PRI coverage"
            self.entries.append(PriEntry(gap_lo, hi, tag, value,
                                         backup_lsn, NIL))
        self._split_at(lo)
        self._split_at(hi)
        i = self._index_of(lo)
        displaced = []
        j = i
        while j < len(self.entries) and self.entries[j].hi <= hi:
            e = self.entries[j]
            displaced.append((e.lo, e.hi, e.tag, e.value))
            j += 1
        self.entries[i:j] = [PriEntry(lo, hi, tag, value, backup_lsn, NIL)]
        if self.log_fn:
            self.log_fn(lo, NIL, hi, False, (tag, value, backup_lsn))
        return displaced

    def record_format(self, pid: int, range_hi: int, format_lsn: int) -> None:
        """A page-format record is a backup of the whole formatted range."""
        self.record_backup(pid, range_hi, TAG_FORMAT_RECORD, format_lsn,
                           format_lsn)

    def apply_logged(self, pid: int, page_lsn: int, range_hi: int,
                     is_write: bool, locator) -> None:
        """Replay a pri_update record during restart (no logging)."""
        assert self.log_fn is None
        if is_write:
            self.record_write(pid, page_lsn)
        else:
            tag, value, backup_lsn = locator
            self.record_backup(pid, range_hi, tag, value, backup_lsn)

    # -- compression -------------------------------------------------------

    @staticmethod
    def _mergeable(a: PriEntry, b: PriEntry) -> bool:
        if a.hi != b.lo or a.tag != b.tag:
            return False
        if a.last_lsn != NIL or b.last_lsn != NIL:
            return False
        if a.tag == TAG_BACKUP_PAGE:
            return b.value == a.value + (b.lo - a.lo) \
                and a.backup_lsn == b.backup_lsn == NIL
        if a.tag == TAG_FORMAT_RECORD:
            # splits of the same original format record share its lsn
            return b.value == a.value
        return False  # in-log images are per-page

    def merge_adjacent(self) -> int:
        """Coalesce mergeable neighbors; returns the entry count removed."""
        out: list[PriEntry] = []
        for e in self.entries:
            if out and self._mergeable(out[-1], e):
                out[-1].hi = e.hi
            else:
                out.append(e.copy())
        removed = len(self.entries) - len(out)
        self.entries = out
        return removed

    def cover_hi(self) -> int:
        return self.entries[-1].hi if self.entries else 0

    def check_coverage(self, expect_lo: int = 0):
        pos = expect_lo
        for e in self.entries:
            assert e.lo == pos and e.hi > e.lo, "PRI coverage gap/overlap"
            pos = e.hi

    # -- serialization -----------------------------------------------------

    def serialize(self, entries: list[PriEntry] | None = None) -> bytes:
        entries = self.entries if entries is None else entries
        out = [struct.pack("<I", len(entries))]
        for e in entries:
            out.append(_ENTRY.pack(e.lo, e.hi, e.tag, e.value,
                                   e.backup_lsn, e.last_lsn))
        return b"".join(out)

    @staticmethod
    def deserialize_entries(raw: bytes) -> list[PriEntry]:
        (n,) = struct.unpack_from("<I", raw, 0)
        pos = 4
        entries = []
        for _ in range(n):
            lo, hi, tag, value, backup_lsn, last_lsn = _ENTRY.unpack_from(
                raw, pos)
            pos += _ENTRY.size
            entries.append(PriEntry(lo, hi, tag, value, backup_lsn, last_lsn))
        return entries

    def load_pieces(self, pieces: list[list[PriEntry]]):
        entries = sorted((e for piece in pieces for e in piece),
                         key=lambda e: e.lo)
        self.entries = entries
        self.check_coverage(entries[0].lo if entries else 0)

    def partition_for_pieces(self, piece_of_pri_page: dict[int, int]) \
            -> tuple[list[PriEntry], list[PriEntry]]:
        """Split entries into two pieces such that the entry covering any
        PRI page is stored in the opposite piece."""
        for pid in piece_of_pri_page:
            if pid < self.cover_hi():
                self._isolate(pid)
        pieces: tuple[list[PriEntry], list[PriEntry]] = ([], [])
        for e in self.entries:
            if e.hi - e.lo == 1 and e.lo in piece_of_pri_page:
                pieces[1 - piece_of_pri_page[e.lo]].append(e)
            else:
                pieces[0].append(e)
        return pieces

    def backup_slots_in_use(self) -> set[int]:
        used = set()
        for e in self.entries:
            if e.tag == TAG_BACKUP_PAGE:
                used.update(range(e.value, e.value + (e.hi - e.lo)))
        return used


class BackupStore:
    """Append-only file of full page images; freed slots are recycled."""

    def __init__(self, disk: Disk, page_size: int):
        self.disk = disk
        self.page_size = page_size
        if BACKUP_FILE not in disk.files:
            disk.create(BACKUP_FILE)
            disk.write(BACKUP_FILE, 0,
                       BACKUP_MAGIC + b"\x01\x00\x00\x00" + b"\x00" * 8)
        self.next_slot = max(
            0, (disk.size(BACKUP_FILE) - BACKUP_HEADER_SIZE)
            // page_size)
        self.free_slots: list[int] = []
        self.freed_ledger: list[int] = []   # every slot ever freed
        self.backup_reads = 0
        self.backup_writes = 0

    def reset_allocator(self, used: set[int]):
        """Rebuild allocation state from the PRI after restart."""
        top = max(used) + 1 if used else 0
        self.next_slot = max(self.next_slot, top)
        self.free_slots = [s for s in range(self.next_slot) if s not in used]

    def alloc(self, count: int = 1) -> int:
        """Allocate ``count`` contiguous slots (contiguity enables ranged
        locators).  Single slots prefer the free list."""
        if count == 1 and self.free_slots:
            return self.free_slots.pop()
        slot = self.next_slot
        self.next_slot += count
        return slot

    def _offset(self, slot: int) -> int:
        return BACKUP_HEADER_SIZE + slot * self.page_size

    def write(self, slot: int, page: Page):
        self.disk.write(BACKUP_FILE, self._offset(slot),
                        page.to_bytes(self.page_size))
        self.backup_writes += 1

    def read(self, slot: int, expected_id: int) -> Page:
        raw = self.disk.read(BACKUP_FILE, self._offset(slot), self.page_size)
        self.backup_reads += 1
        if len(raw) < self.page_size:
            raise DetectedFailure(expected_id, "io_error")
        return page_from_bytes(raw, expected_id=expected_id)

    def free(self, slot: int):
        self.free_slots.append(slot)
        self.freed_ledger.append(slot)
