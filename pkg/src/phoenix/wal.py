"""Append-only recovery log with per-transaction and per-page chains.

File format: 16-byte header (magic ``PPHL``, u32 version, pad), then frames

    u32 total_len | u8 type | u64 txn_id | u64 page_id
    | u64 prev_txn_lsn | u64 prev_page_lsn | payload | u32 total_len

All integers little-endian.  The trailing length copy enables backward
scans.  An LSN is the byte offset of a frame; 0 is nil (the header occupies
the low offsets so no record ever has LSN 0).

The log is the stability root: it is never subject to fault injection.
Records are buffered in memory until ``flush``; a crash discards the
unflushed tail.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass

from phoenix.disk import Disk
from phoenix.errors import SystemFailureError, UsageError

MAGIC = b"PPHL"
VERSION = 1
FILE_HEADER_SIZE = 16
WAL_FILE = "wal.log"

NIL_LSN = 0
NIL_TXN = 0
NIL_PAGE = 0xFFFFFFFFFFFFFFFF

_FRAME_HEAD = struct.Struct("<IBQQQQ")
_FRAME_OVERHEAD = _FRAME_HEAD.size + 4  # plus trailing length


class RecType(enum.IntEnum):
    UPDATE = 1
    COMPENSATION = 2
    TXN_COMMIT = 3
    TXN_ABORT = 4
    SYS_COMMIT = 5
    PAGE_FORMAT = 6
    PAGE_IMAGE = 7
    PRI_UPDATE = 8
    CHECKPOINT_BEGIN = 9
    CHECKPOINT_END = 10


@dataclass
class LogRecord:
    lsn: int
    type: RecType
    txn_id: int
    page_id: int
    prev_txn_lsn: int
    prev_page_lsn: int
    payload: bytes

    def encode(self) -> bytes:
        total = _FRAME_OVERHEAD + len(self.payload)
        head = _FRAME_HEAD.pack(total, int(self.type), self.txn_id,
                                self.page_id, self.prev_txn_lsn,
                                self.prev_page_lsn)
        return head + self.payload + struct.pack("<I", total)


def _decode(lsn: int, raw: bytes) -> LogRecord:
    total, rtype, txn_id, page_id, ptl, ppl = _FRAME_HEAD.unpack(
        raw[:_FRAME_HEAD.size])
    if total != len(raw):
        raise SystemFailureError(f"bad frame length at lsn {lsn}")
    (tail,) = struct.unpack("<I", raw[-4:])
    if tail != total:
        raise SystemFailureError(f"frame tail mismatch at lsn {lsn}")
    return LogRecord(lsn, RecType(rtype), txn_id, page_id, ptl, ppl,
                     raw[_FRAME_HEAD.size:-4])


class Wal:
    def __init__(self, disk: Disk):
        self.disk = disk
        if WAL_FILE not in disk.files:
            disk.create(WAL_FILE)
            hdr = MAGIC + struct.pack("<I", VERSION) + b"\x00" * 8
            disk.write(WAL_FILE, 0, hdr)
        else:
            hdr = disk.read_quiet(WAL_FILE, 0, FILE_HEADER_SIZE)
            if hdr[:4] != MAGIC:
                raise SystemFailureError("bad log magic")
        self.durable_end = disk.size(WAL_FILE)
        self.end = self.durable_end
        self._buffer: list[LogRecord] = []  # unflushed tail, in order
        self._buffer_index: dict[int, LogRecord] = {}
        self.flush_count = 0        # flushes that actually wrote bytes
        self.forced_flushes = 0     # of those, forced by commit/checkpoint
        self.record_reads = 0       # point reads (chain walks, redo fetches)

    # -- appending ---------------------------------------------------------

    def append(self, rtype: RecType, txn_id: int = NIL_TXN,
               page_id: int = NIL_PAGE, prev_txn_lsn: int = NIL_LSN,
               prev_page_lsn: int = NIL_LSN, payload: bytes = b"") -> int:
        lsn = self.end
        rec = LogRecord(lsn, rtype, txn_id, page_id, prev_txn_lsn,
                        prev_page_lsn, payload)
        self._buffer.append(rec)
        self._buffer_index[lsn] = rec
        self.end += _FRAME_OVERHEAD + len(payload)
        return lsn

    def flush(self, up_to: int | None = None, forced: bool = True) -> None:
        """Make all records with lsn <= up_to durable (None = everything).

        ``forced`` marks flushes demanded by a user commit or an explicit
        checkpoint; write-ahead flushes that precede a page write pass
        ``forced=False`` so the two populations can be audited separately.
        """
        if up_to is None:
            up_to = self.end
        if up_to == NIL_LSN or up_to < self.durable_end or not self._buffer:
            return
        chunk = bytearray()
        start = self.durable_end
        flushed = 0
        for rec in self._buffer:
            if rec.lsn > up_to:
                break
            chunk.extend(rec.encode())
            flushed += 1
        if not flushed:
            return
        self.disk.write(WAL_FILE, start, bytes(chunk))
        self.flush_count += 1
        if forced:
            self.forced_flushes += 1
        for rec in self._buffer[:flushed]:
            del self._buffer_index[rec.lsn]
        self._buffer = self._buffer[flushed:]
        self.durable_end = start + len(chunk)

    # -- reading -----------------------------------------------------------

    def read(self, lsn: int) -> LogRecord:
        if lsn == NIL_LSN:
            raise UsageError("read of nil lsn")
        self.record_reads += 1
        rec = self._buffer_index.get(lsn)
        if rec is not None:
            return rec
        if lsn >= self.durable_end or lsn < FILE_HEADER_SIZE:
            raise UsageError(f"invalid lsn {lsn}")
        (total,) = struct.unpack("<I", self.disk.read(WAL_FILE, lsn, 4))
        raw = self.disk.read_quiet(WAL_FILE, lsn, total)
        return _decode(lsn, raw)

    def scan(self, from_lsn: int | None = None, to_lsn: int | None = None):
        """Yield every record in [from_lsn, to_lsn) in append order."""
        lsn = FILE_HEADER_SIZE if from_lsn in (None, NIL_LSN) else from_lsn
        end = self.end if to_lsn is None else to_lsn
        while lsn < end:
            rec = self._buffer_index.get(lsn)
            if rec is None:
                (total,) = struct.unpack(
                    "<I", self.disk.read_quiet(WAL_FILE, lsn, 4))
                rec = _decode(lsn, self.disk.read_quiet(WAL_FILE, lsn, total))
            yield rec
            lsn = rec.lsn + _FRAME_OVERHEAD + len(rec.payload)

    def scan_backward(self, from_end: int | None = None):
        """Yield records newest-first using the trailing length field."""
        pos = self.end if from_end is None else from_end
        # emit buffered tail first
        for rec in reversed(self._buffer):
            if rec.lsn + _FRAME_OVERHEAD + len(rec.payload) <= pos:
                yield rec
        pos = min(pos, self.durable_end)
        while pos > FILE_HEADER_SIZE:
            (total,) = struct.unpack(
                "<I", self.disk.read_quiet(WAL_FILE, pos - 4, 4))
            start = pos - total
            yield _decode(start, self.disk.read_quiet(WAL_FILE, start, total))
            pos = start


# -- typed payloads ---------------------------------------------------------

UNDO_PHYSICAL = 0
UNDO_BTREE_PUT = 2   # logical undo: remove key / restore prior value
UNDO_BTREE_DEL = 3   # logical undo: re-insert old value


def encode_update(deltas: list[tuple[int, bytes, bytes]],
                  undo_kind: int = UNDO_PHYSICAL,
                  key: bytes = b"", had_old: bool = False,
                  old_value: bytes = b"") -> bytes:
    parts = [struct.pack("<BH", undo_kind, len(deltas))]
    for off, old, new in deltas:
        assert len(old) == len(new)
        parts.append(struct.pack("<II", off, len(old)))
        parts.append(old)
        parts.append(new)
    if undo_kind in (UNDO_BTREE_PUT, UNDO_BTREE_DEL):
        parts.append(struct.pack("<HBI", len(key), int(had_old),
                                 len(old_value)))
        parts.append(key)
        parts.append(old_value)
    return b"".join(parts)


def decode_update(payload: bytes):
    undo_kind, n = struct.unpack_from("<BH", payload, 0)
    pos = 3
    deltas = []
    for _ in range(n):
        off, length = struct.unpack_from("<II", payload, pos)
        pos += 8
        old = payload[pos:pos + length]
        pos += length
        new = payload[pos:pos + length]
        pos += length
        deltas.append((off, old, new))
    undo = None
    if undo_kind in (UNDO_BTREE_PUT, UNDO_BTREE_DEL):
        klen, had_old, vlen = struct.unpack_from("<HBI", payload, pos)
        pos += 7
        key = payload[pos:pos + klen]
        pos += klen
        old_value = payload[pos:pos + vlen]
        undo = (undo_kind, key, bool(had_old), old_value)
    return deltas, undo_kind, undo


def encode_page_format(kind: int, range_hi: int) -> bytes:
    return struct.pack("<BQ", kind, range_hi)


def decode_page_format(payload: bytes) -> tuple[int, int]:
    return struct.unpack("<BQ", payload)


PRI_HAS_LOCATOR = 1
PRI_IS_WRITE = 2


def encode_pri_update(data_page_id: int, page_lsn: int, range_hi: int,
                      is_write: bool, locator=None) -> bytes:
    flags = (PRI_IS_WRITE if is_write else 0)
    if locator is not None:
        flags |= PRI_HAS_LOCATOR
    out = struct.pack("<BQQQ", flags, data_page_id, page_lsn, range_hi)
    if locator is not None:
        tag, value, backup_lsn = locator
        out += struct.pack("<BQQ", tag, value, backup_lsn)
    return out


def decode_pri_update(payload: bytes):
    flags, pid, page_lsn, range_hi = struct.unpack_from("<BQQQ", payload, 0)
    locator = None
    if flags & PRI_HAS_LOCATOR:
        locator = struct.unpack_from("<BQQ", payload, 25)
    return pid, page_lsn, range_hi, bool(flags & PRI_IS_WRITE), locator


def encode_checkpoint_end(begin_lsn: int, att: dict[int, int],
                          dpt: dict[int, int]) -> bytes:
    doc = {"begin": begin_lsn,
           "att": sorted(att.items()),
           "dpt": sorted(dpt.items())}
    return json.dumps(doc, sort_keys=True).encode()


def decode_checkpoint_end(payload: bytes):
    doc = json.loads(payload.decode())
    return doc["begin"], dict(map(tuple, doc["att"])), \
        dict(map(tuple, doc["dpt"]))
