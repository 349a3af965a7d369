"""Slotted page file, logical-to-physical translation, fault injection.

The data file is a slot array of fixed-size pages; slot 0 holds the meta
page (magic ``PPHX``).  Logical page ids map to physical slots through a
translation table that is identity except for relocated pages; slots
retired after a single-page failure go on a bad-block set and are never
reused.

Every read passes through the fault injector.  Faults are deterministic:
a rule (page range, trigger read-count, mode) fires on the Nth physical
read of a matching page, with any randomness drawn from an RNG seeded by
(plan seed, page id, read count).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from phoenix.disk import Disk
from phoenix.errors import DetectedFailure, MediaFailure, UsageError
from phoenix.pages import Page, page_from_bytes

DATA_FILE = "data.db"

FAULT_MODES = ("bitflip", "torn", "stale", "unreadable")


@dataclass
class FaultRule:
    lo: int            # page id range [lo, hi)
    hi: int
    read_count: int    # fires on the Nth physical read of a matching page
    mode: str
    fired: bool = False

    def matches(self, pid: int, count: int) -> bool:
        return not self.fired and self.lo <= pid < self.hi \
            and count == self.read_count


@dataclass
class FaultPlan:
    seed: int = 0
    rules: list[FaultRule] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "FaultPlan":
        """Line grammar: ``seed <u64>`` and
        ``fault <pageid|lo..hi> <readcount> <mode>``."""
        plan = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "seed":
                plan.seed = int(parts[1])
            elif parts[0] == "fault":
                if len(parts) != 4:
                    raise UsageError(f"line {lineno}: bad fault rule")
                rng, count, mode = parts[1], int(parts[2]), parts[3]
                if mode not in FAULT_MODES:
                    raise UsageError(f"line {lineno}: unknown mode {mode}")
                if ".." in rng:
                    lo, hi = rng.split("..")
                    plan.rules.append(FaultRule(int(lo), int(hi) + 1,
                                                count, mode))
                else:
                    pid = int(rng)
                    plan.rules.append(FaultRule(pid, pid + 1, count, mode))
            else:
                raise UsageError(f"line {lineno}: unknown directive")
        return plan


class FaultInjector:
    def __init__(self, plan: FaultPlan | None, disk: Disk, page_size: int):
        self.plan = plan or FaultPlan()
        self.disk = disk
        self.page_size = page_size
        self.read_counts: dict[int, int] = {}
        self.events: list[tuple[int, int, str]] = []  # (pid, count, mode)
        self.on_fire = None  # optional callable(pid, count, mode)

    def filter(self, pid: int, slot: int, raw: bytes) -> bytes:
        count = self.read_counts.get(pid, 0) + 1
        self.read_counts[pid] = count
        for rule in self.plan.rules:
            if rule.matches(pid, count):
                rule.fired = True
                self.events.append((pid, count, rule.mode))
                if self.on_fire is not None:
                    self.on_fire(pid, count, rule.mode)
                return self._apply(rule.mode, pid, slot, count, raw)
        return raw

    def _apply(self, mode: str, pid: int, slot: int, count: int,
               raw: bytes) -> bytes:
        rng = random.Random(self.plan.seed * 1000003 + pid * 8191 + count)
        if mode == "unreadable":
            raise DetectedFailure(pid, "io_error")
        prior = self.disk.prior_image(DATA_FILE, slot * self.page_size,
                                      self.page_size)
        if mode == "stale" and prior is not None:
            return prior
        if mode == "torn":
            half = len(raw) // 2
            tail = prior[half:] if prior is not None else b"\x00" * (
                len(raw) - half)
            return raw[:half] + tail
        # bitflip (also the fallback when stale has no prior version)
        bit = rng.randrange(len(raw) * 8)
        buf = bytearray(raw)
        buf[bit // 8] ^= 1 << (bit % 8)
        return bytes(buf)


class TranslationTable:
    """Identity mapping plus relocation exceptions and the bad-block set."""

    def __init__(self, slot_count: int):
        self.slot_count = slot_count       # physical slots ever allocated
        self.reloc: dict[int, int] = {}    # logical id -> non-identity slot
        self.bad_blocks: set[int] = set()

    def slot_of(self, pid: int) -> int:
        slot = self.reloc.get(pid, pid)
        if slot >= self.slot_count:
            raise UsageError(f"page {pid} not mapped")
        return slot

    def fresh_slot(self) -> int:
        slot = self.slot_count
        self.slot_count += 1
        return slot

    def check(self):
        slots = list(self.reloc.values())
        assert len(slots) == len(set(slots)), "translation not injective"
        assert not (set(slots) & self.bad_blocks), "mapping into bad block"


class PageStore:
    """Physical page I/O.  All durable page state flows through here."""

    def __init__(self, disk: Disk, page_size: int,
                 table: TranslationTable,
                 injector: FaultInjector | None = None):
        self.disk = disk
        self.page_size = page_size
        self.table = table
        self.injector = injector or FaultInjector(None, disk, page_size)
        if DATA_FILE not in disk.files:
            disk.create(DATA_FILE)
        self.page_reads = 0
        self.page_writes = 0

    def read_page(self, pid: int) -> Page:
        """Verified read; raises DetectedFailure rather than returning
        corrupt bytes.  Fault injection applies to the raw bytes before
        verification."""
        slot = self.table.slot_of(pid)
        raw = self.disk.read(DATA_FILE, slot * self.page_size, self.page_size)
        self.page_reads += 1
        raw = self.injector.filter(pid, slot, raw)
        return page_from_bytes(raw, expected_id=pid)

    def read_page_raw(self, pid: int) -> bytes:
        """Unverified, uncounted read of the durable image (oracles only)."""
        slot = self.table.slot_of(pid)
        return self.disk.read_quiet(DATA_FILE, slot * self.page_size,
                                    self.page_size)

    def write_page(self, page: Page) -> None:
        """Durable write; recomputes the checksum.  The caller (buffer
        pool) is responsible for the write-ahead rule."""
        slot = self.table.slot_of(page.id)
        self.disk.write(DATA_FILE, slot * self.page_size,
                        page.to_bytes(self.page_size))
        self.page_writes += 1

    def relocate(self, pid: int) -> int:
        """Move pid to a fresh physical slot; retire the old slot.  The
        caller must rewrite the page and log the mapping change."""
        old = self.table.slot_of(pid)
        new = self.table.fresh_slot()
        self.table.reloc[pid] = new
        self.table.bad_blocks.add(old)
        return new
