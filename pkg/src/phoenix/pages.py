"""Physical page format: fixed-size pages with a checksummed header.

Header layout (32 bytes, little-endian):
    u64 page id | u8 kind | u8 pad | u16 reserved | u32 update_count
    | u64 page_lsn | u32 checksum

``update_count`` counts PageLSN changes since the last backup of the page
and paces the backup policy.  The checksum is CRC-32C over the whole page
with the checksum field zeroed.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from phoenix.checksum import crc32c
from phoenix.errors import DetectedFailure

HEADER = struct.Struct("<QBBHIQI")
HEADER_SIZE = 32
_CHECKSUM_OFF = 24  # offset of the u32 checksum within the header

DEFAULT_PAGE_SIZE = 8192


class PageKind(enum.IntEnum):
    FREE = 0
    HEAP = 1
    BTREE_BRANCH = 2
    BTREE_LEAF = 3
    PRI = 4
    META = 5


def body_size(page_size: int) -> int:
    return page_size - HEADER_SIZE


@dataclass
class Page:
    id: int
    kind: PageKind
    page_lsn: int
    update_count: int
    body: bytes

    def to_bytes(self, page_size: int) -> bytes:
        assert len(self.body) == body_size(page_size), \
            f"body {len(self.body)} != {body_size(page_size)}"
        head = bytearray(HEADER.pack(self.id, int(self.kind), 0, 0,
                                     self.update_count, self.page_lsn, 0))
        head.extend(b"\x00" * (HEADER_SIZE - HEADER.size))
        raw = bytearray(head) + self.body
        crc = crc32c(raw)
        raw[_CHECKSUM_OFF:_CHECKSUM_OFF + 4] = struct.pack("<I", crc)
        return bytes(raw)

    def copy(self) -> "Page":
        return Page(self.id, self.kind, self.page_lsn, self.update_count,
                    bytes(self.body))


def page_from_bytes(raw: bytes, expected_id: int | None = None) -> Page:
    """Decode and verify a raw page image.

    Raises DetectedFailure(checksum_mismatch) if the stored CRC does not
    match, and DetectedFailure(wrong_page_id) if the header names a
    different page than requested.
    """
    pid, kind, _, _, update_count, page_lsn, stored_crc = HEADER.unpack(
        raw[:HEADER.size])
    zeroed = bytearray(raw)
    zeroed[_CHECKSUM_OFF:_CHECKSUM_OFF + 4] = b"\x00\x00\x00\x00"
    if crc32c(zeroed) != stored_crc:
        raise DetectedFailure(expected_id if expected_id is not None else pid,
                              "checksum_mismatch")
    if expected_id is not None and pid != expected_id:
        raise DetectedFailure(expected_id, "wrong_page_id")
    return Page(pid, PageKind(kind), page_lsn, update_count,
                bytes(raw[HEADER_SIZE:]))


def byte_delta(old: bytes, new: bytes) -> list[tuple[int, bytes, bytes]]:
    """Single contiguous (offset, old, new) range covering all differences."""
    assert len(old) == len(new)
    if old == new:
        return []
    n = len(old)
    i = 0
    while old[i] == new[i]:
        i += 1
    j = n - 1
    while old[j] == new[j]:
        j -= 1
    return [(i, old[i:j + 1], new[i:j + 1])]


def apply_delta(body: bytes, deltas: list[tuple[int, bytes, bytes]],
                undo: bool = False) -> bytes:
    buf = bytearray(body)
    for off, old, new in deltas:
        img = old if undo else new
        buf[off:off + len(img)] = img
    return bytes(buf)
