"""Meta page (slot 0): store identity plus bootstrap state.

Body layout: magic ``PPHX``, u32 format version, u32 page size, u64 slot
count, u32 json length, json document, zero padding.  The json carries the
translation-table exceptions, bad-block set, B-tree root, allocation
cursor, and the PRI snapshot page lists.  Changes are logged as ordinary
update records on page 0 so restart can rebuild the table from the log.
"""

from __future__ import annotations

import json
import struct

from phoenix.errors import MediaFailure, SystemFailureError
from phoenix.page_store import TranslationTable

MAGIC = b"PPHX"
VERSION = 1
_PREFIX = struct.Struct("<4sIIQI")


class MetaState:
    def __init__(self, page_size: int, table: TranslationTable,
                 initial_pages: int):
        self.page_size = page_size
        self.table = table
        self.initial_pages = initial_pages
        self.root_pid = 0            # 0 = no tree yet
        self.next_page_id = 1        # id 0 is the meta page
        self.pri_pages: tuple[list[int], list[int]] = ([], [])

    def encode_body(self, body_size: int) -> bytes:
        doc = {
            "slot_count": self.table.slot_count,
            "reloc": sorted(self.table.reloc.items()),
            "bad": sorted(self.table.bad_blocks),
            "root": self.root_pid,
            "next_page_id": self.next_page_id,
            "pri_pages": [sorted(self.pri_pages[0]),
                          sorted(self.pri_pages[1])],
            "initial_pages": self.initial_pages,
        }
        blob = json.dumps(doc, sort_keys=True).encode()
        body = _PREFIX.pack(MAGIC, VERSION, self.page_size,
                            self.table.slot_count, len(blob)) + blob
        if len(body) > body_size:
            raise SystemFailureError("meta page overflow")
        return body + b"\x00" * (body_size - len(body))

    @classmethod
    def decode_body(cls, body: bytes) -> "MetaState":
        magic, version, page_size, slot_count, blob_len = _PREFIX.unpack_from(
            body, 0)
        if magic != MAGIC or version != VERSION:
            raise MediaFailure("bad meta page magic/version", 0)
        doc = json.loads(body[_PREFIX.size:_PREFIX.size + blob_len].decode())
        table = TranslationTable(doc["slot_count"])
        table.reloc = {int(k): int(v) for k, v in doc["reloc"]}
        table.bad_blocks = set(doc["bad"])
        meta = cls(page_size, table, doc["initial_pages"])
        meta.root_pid = doc["root"]
        meta.next_page_id = doc["next_page_id"]
        meta.pri_pages = (list(doc["pri_pages"][0]),
                          list(doc["pri_pages"][1]))
        return meta
