"""Fixed-slot heap pages: a simple record store used alongside the B-tree
to exercise recovery on non-index pages."""

from __future__ import annotations

import struct

SLOT_SIZE = 128
_LEN = struct.Struct("<H")
MAX_VALUE = SLOT_SIZE - _LEN.size


def slots_per_page(body_size: int) -> int:
    return body_size // SLOT_SIZE


def read_slot(body: bytes, slot: int) -> bytes | None:
    off = slot * SLOT_SIZE
    (length,) = _LEN.unpack_from(body, off)
    if length == 0xFFFF:
        return None
    return bytes(body[off + _LEN.size:off + _LEN.size + length])


def write_slot(body: bytes, slot: int, value: bytes | None) -> bytes:
    if value is not None and len(value) > MAX_VALUE:
        raise ValueError(f"heap value exceeds {MAX_VALUE} bytes")
    off = slot * SLOT_SIZE
    buf = bytearray(body)
    cell = bytearray(SLOT_SIZE)
    if value is None:
        cell[:_LEN.size] = _LEN.pack(0xFFFF)
    else:
        cell[:_LEN.size] = _LEN.pack(len(value))
        cell[_LEN.size:_LEN.size + len(value)] = value
    buf[off:off + SLOT_SIZE] = cell
    return bytes(buf)


def empty_body(body_size: int) -> bytes:
    body = b"\x00" * body_size
    buf = bytearray(body)
    for slot in range(slots_per_page(body_size)):
        buf[slot * SLOT_SIZE:slot * SLOT_SIZE + _LEN.size] = _LEN.pack(0xFFFF)
    return bytes(buf)
