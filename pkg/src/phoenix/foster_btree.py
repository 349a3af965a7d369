"""Foster B-tree with symmetric fence keys.

Every node carries a low and a high fence key (copies of the separators
posted when it was split); a branch with N children stores N+1 key values.
After a split the old node acts as *foster parent* of the new node until a
later traversal adopts the separator into the real parent; a foster parent
carries the high fence key of its entire foster chain.  Because fence keys
replicate separators along every seam, each parent-to-child and
foster-parent-to-foster-child pointer traversal verifies the child's fence
keys against two key values in the parent, so structural corruption is
detected as a side effect of ordinary searches.

Keys and values are opaque byte strings.  A key is modeled as
(flag, bytes) where flag 1 is the +infinity sentinel used as the high
fence of the rightmost seam.  Leaves always contain records for both of
their bounds (the upper one always a ghost), so an empty leaf holds
exactly two fence-key records.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from phoenix.errors import DetectedFailure, MediaFailure, UsageError
from phoenix.pages import PageKind
from phoenix.wal import UNDO_BTREE_DEL, UNDO_BTREE_PUT, RecType

Key = tuple[int, bytes]
MIN_KEY: Key = (0, b"")
INF_KEY: Key = (1, b"")

_HEAD = struct.Struct("<HHQ")
_KEY = struct.Struct("<BH")
_LEAF_REC = struct.Struct("<BHH")


@dataclass
class Record:
    key: Key
    value: bytes
    ghost: bool


@dataclass
class Node:
    level: int                     # 0 = leaf
    low: Key
    high: Key                      # high fence of the entire foster chain
    foster_pid: int = 0            # 0 = none
    foster_sep: Key | None = None
    records: list[Record] = field(default_factory=list)   # leaf
    children: list[int] = field(default_factory=list)     # branch
    seps: list[Key] = field(default_factory=list)         # branch interior

    @property
    def own_upper(self) -> Key:
        """Upper bound of this node's own records (excluding foster chain)."""
        return self.foster_sep if self.foster_pid else self.high

    def bounds(self) -> list[Key]:
        return [self.low] + self.seps + [self.own_upper]


def _enc_key(k: Key) -> bytes:
    flag, b = k
    return _KEY.pack(flag, len(b)) + b


def _dec_key(raw: bytes, pos: int) -> tuple[Key, int]:
    flag, length = _KEY.unpack_from(raw, pos)
    pos += _KEY.size
    return (flag, bytes(raw[pos:pos + length])), pos + length


def encode_node(node: Node) -> bytes:
    nrec = len(node.records) if node.level == 0 else len(node.children)
    parts = [_HEAD.pack(node.level, nrec, node.foster_pid),
             _enc_key(node.low), _enc_key(node.high)]
    if node.foster_pid:
        parts.append(_enc_key(node.foster_sep))
    if node.level == 0:
        for r in node.records:
            parts.append(_LEAF_REC.pack(int(r.ghost), len(r.key[1]),
                                        len(r.value)))
            parts.append(_KEY.pack(r.key[0], 0)[:1])  # key flag byte
            parts.append(r.key[1])
            parts.append(r.value)
    else:
        for c in node.children:
            parts.append(struct.pack("<Q", c))
        for s in node.seps:
            parts.append(_enc_key(s))
    return b"".join(parts)


def decode_node(body: bytes) -> Node:
    try:
        level, nrec, foster_pid = _HEAD.unpack_from(body, 0)
        pos = _HEAD.size
        low, pos = _dec_key(body, pos)
        high, pos = _dec_key(body, pos)
        foster_sep = None
        if foster_pid:
            foster_sep, pos = _dec_key(body, pos)
        node = Node(level, low, high, foster_pid, foster_sep)
        if level == 0:
            for _ in range(nrec):
                ghost, klen, vlen = _LEAF_REC.unpack_from(body, pos)
                pos += _LEAF_REC.size
                kflag = body[pos]
                pos += 1
                key = (kflag, bytes(body[pos:pos + klen]))
                pos += klen
                value = bytes(body[pos:pos + vlen])
                pos += vlen
                node.records.append(Record(key, value, bool(ghost)))
        else:
            for _ in range(nrec):
                (c,) = struct.unpack_from("<Q", body, pos)
                pos += 8
                node.children.append(c)
            for _ in range(nrec - 1):
                s, pos = _dec_key(body, pos)
                node.seps.append(s)
        return node
    except (struct.error, IndexError, ValueError) as exc:
        raise DetectedFailure(-1, "node_decode_error") from exc


def node_size(node: Node) -> int:
    return len(encode_node(node))


def empty_leaf_node() -> Node:
    """Freshly formatted leaf: two fence-key records, both ghosts."""
    n = Node(0, MIN_KEY, INF_KEY)
    n.records = [Record(MIN_KEY, b"", True), Record(INF_KEY, b"", True)]
    return n


def empty_branch_node() -> Node:
    return Node(1, MIN_KEY, INF_KEY)


def _find(records: list[Record], key: Key) -> int | None:
    lo, hi = 0, len(records) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if records[mid].key == key:
            return mid
        if records[mid].key < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return None


def _insert_pos(records: list[Record], key: Key) -> int:
    lo, hi = 0, len(records)
    while lo < hi:
        mid = (lo + hi) // 2
        if records[mid].key < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


class FosterBTree:
    """Tree operations on top of the engine's page-edit machinery."""

    def __init__(self, engine):
        self.engine = engine
        self.seam_checks = 0
        self.seam_failures = 0

    # -- node access --------------------------------------------------------

    def _read_node(self, pid: int) -> Node:
        frame = self.engine.pool.fix(pid)
        try:
            return decode_node(frame.page.body)
        finally:
            self.engine.pool.unfix(frame)

    def _fetch_verified(self, pid: int, lo: Key, hi: Key) -> Node:
        """Fetch a node and verify its fence keys against the two key
        values the parent (or foster parent) holds for this seam.  On
        mismatch the child is treated as a single-page failure, recovered,
        and re-verified once."""
        for attempt in (0, 1):
            try:
                node = self._read_node(pid)
            except DetectedFailure:
                if attempt:
                    raise MediaFailure("node unreadable after recovery", pid)
                self.engine.recover_page(pid)
                continue
            self.seam_checks += 1
            if node.low == lo and node.high == hi:
                return node
            self.seam_failures += 1
            if attempt:
                raise MediaFailure("fence keys still wrong after recovery",
                                   pid)
            self.engine.recover_page_failed(
                pid, DetectedFailure(pid, "fence_mismatch"))
        raise AssertionError("unreachable")

    # -- descent -------------------------------------------------------------

    def _descend(self, key: Key, structural: bool = True):
        """Root-to-leaf pass with seam verification.  When ``structural``
        is true, foster children seen along the way are adopted and a
        foster root grows the tree (both as system transactions)."""
        pid = self.engine.meta.root_pid
        lo, hi = MIN_KEY, INF_KEY
        while True:
            node = self._fetch_verified(pid, lo, hi)
            if node.foster_pid and pid == self.engine.meta.root_pid \
                    and structural:
                self._grow_root()
                pid = self.engine.meta.root_pid
                continue
            if node.foster_pid and key >= node.foster_sep:
                lo, hi = node.foster_sep, node.high
                pid = node.foster_pid
                continue
            if node.level == 0:
                return pid, node, lo, hi
            bounds = node.bounds()
            i = 0
            while i + 1 < len(bounds) and key >= bounds[i + 1]:
                i += 1
            cpid = node.children[i]
            clo, chi = bounds[i], bounds[i + 1]
            if structural:
                child = self._fetch_verified(cpid, clo, chi)
                if child.foster_pid:
                    self._adopt(pid, cpid, clo, chi)
                    continue  # re-read this parent, pointers changed
            pid, lo, hi = cpid, clo, chi

    # -- public ops ----------------------------------------------------------

    def get(self, key_bytes: bytes) -> bytes | None:
        key = (0, key_bytes)
        _, node, _, _ = self._descend(key)
        i = _find(node.records, key)
        if i is None or node.records[i].ghost:
            return None
        return node.records[i].value

    def put(self, txn, key_bytes: bytes, value: bytes) -> None:
        """Insert or overwrite (the workload's repeated-update primitive)."""
        self._put(txn, (0, key_bytes), value, RecType.UPDATE, None)

    def insert(self, txn, key_bytes: bytes, value: bytes) -> None:
        if self.get(key_bytes) is not None:
            raise UsageError(f"duplicate insert of {key_bytes!r}")
        self.put(txn, key_bytes, value)

    def delete(self, txn, key_bytes: bytes) -> None:
        key = (0, key_bytes)
        while True:
            pid, node, _, _ = self._descend(key)
            i = _find(node.records, key)
            if i is None or node.records[i].ghost:
                raise KeyError(key_bytes)
            new = _clone(node)
            old_value = new.records[i].value
            new.records[i] = Record(key, b"", True)
            if self._edit(txn, pid, node, new, RecType.UPDATE,
                          undo=(UNDO_BTREE_DEL, key_bytes, True, old_value)):
                return

    def _put(self, txn, key: Key, value: bytes, rtype: RecType,
             prev_txn_override: int | None) -> None:
        while True:
            pid, node, lo, hi = self._descend(key)
            new = _clone(node)
            i = _find(new.records, key)
            if i is not None:
                r = new.records[i]
                had_old = not r.ghost
                old_value = r.value if had_old else b""
                # keep bound records in place; just (un)ghost
                new.records[i] = Record(key, value, False)
                if key == new.own_upper:
                    raise UsageError("insert at exclusive upper bound")
            else:
                had_old, old_value = False, b""
                new.records.insert(_insert_pos(new.records, key),
                                   Record(key, value, False))
            if self._edit(txn, pid, node, new, rtype,
                          undo=(UNDO_BTREE_PUT, key[1], had_old, old_value),
                          prev_txn_override=prev_txn_override):
                return

    def _edit(self, txn, pid: int, old: Node, new: Node, rtype: RecType,
              undo, prev_txn_override=None) -> bool:
        """Apply a leaf mutation if it fits; otherwise compact or split
        (system transactions) and report False so the caller retries."""
        body_size = self.engine.body_size
        if node_size(new) > body_size:
            if self._compact(pid):
                return False
            self._split(pid)
            return False
        undo_kind, key_bytes, had_old, old_value = undo
        self.engine.page_edit(txn, pid, self._pad(encode_node(new)),
                              rtype=rtype, undo_kind=undo_kind,
                              key=key_bytes, had_old=had_old,
                              old_value=old_value,
                              prev_txn_override=prev_txn_override)
        return True

    def _pad(self, body: bytes) -> bytes:
        return body + b"\x00" * (self.engine.body_size - len(body))

    # -- undo (logical compensation) ------------------------------------------

    def undo_put(self, txn, key_bytes: bytes, had_old: bool,
                 old_value: bytes, prev_txn_override: int):
        key = (0, key_bytes)
        if had_old:
            self._put(txn, key, old_value, RecType.COMPENSATION,
                      prev_txn_override)
            return
        while True:
            pid, node, _, _ = self._descend(key)
            i = _find(node.records, key)
            if i is None or node.records[i].ghost:
                # already gone (idempotent under repeated restarts)
                self.engine.txns.log(txn, RecType.COMPENSATION,
                                     self.engine.NIL_PAGE, 0, b"",
                                     prev_txn_override=prev_txn_override)
                return
            new = _clone(node)
            new.records[i] = Record(key, b"", True)
            if self._edit(txn, pid, node, new, RecType.COMPENSATION,
                          undo=(0, b"", False, b""),
                          prev_txn_override=prev_txn_override):
                return

    def undo_delete(self, txn, key_bytes: bytes, old_value: bytes,
                    prev_txn_override: int):
        self._put(txn, (0, key_bytes), old_value, RecType.COMPENSATION,
                  prev_txn_override)

    # -- structural changes (system transactions) -----------------------------

    def _compact(self, pid: int) -> bool:
        """Drop interior ghost records (contents-neutral)."""
        node = self._read_node(pid)
        keep = [node.records[0]] + \
            [r for r in node.records[1:-1] if not r.ghost] + \
            [node.records[-1]]
        if len(keep) == len(node.records):
            return False
        sys = self.engine.begin_system()
        new = _clone(node)
        new.records = keep
        self.engine.page_edit(sys, pid, self._pad(encode_node(new)))
        self.engine.txns.commit(sys)
        return True

    def _split(self, pid: int) -> None:
        """Split a full node: the old node becomes foster parent of a new
        node holding the upper half.  Contents-neutral, so it runs (and
        commits) as its own system transaction."""
        sys = self.engine.begin_system()
        node = self._read_node(pid)
        if node.level == 0:
            m = len(node.records) // 2
            if m == 0:
                m = 1
            sep = node.records[m].key
            if sep == node.low:
                m += 1
                sep = node.records[m].key
            new_pid = self.engine.allocate_page(sys)
            self.engine.format_page(sys, new_pid, PageKind.BTREE_LEAF)
            right = Node(0, sep, node.high, node.foster_pid, node.foster_sep)
            right.records = list(node.records[m:])
            if right.records[0].key != sep:
                right.records.insert(0, Record(sep, b"", True))
            left = _clone(node)
            left.records = list(node.records[:m])
            if not left.records or left.records[-1].key != sep:
                left.records.append(Record(sep, b"", True))
            left.foster_pid = new_pid
            left.foster_sep = sep
        else:
            m = len(node.seps) // 2
            sep = node.seps[m]
            new_pid = self.engine.allocate_page(sys)
            self.engine.format_page(sys, new_pid, PageKind.BTREE_BRANCH)
            right = Node(node.level, sep, node.high, node.foster_pid,
                         node.foster_sep)
            right.children = list(node.children[m + 1:])
            right.seps = list(node.seps[m + 1:])
            left = _clone(node)
            left.children = list(node.children[:m + 1])
            left.seps = list(node.seps[:m])
            left.foster_pid = new_pid
            left.foster_sep = sep
        self.engine.page_edit(sys, new_pid, self._pad(encode_node(right)))
        self.engine.page_edit(sys, pid, self._pad(encode_node(left)))
        self.engine.txns.commit(sys)

    def _adopt(self, parent_pid: int, child_pid: int, clo: Key, chi: Key):
        """Post the foster separator into the real parent and dissolve the
        foster edge (one link per pass)."""
        parent = self._read_node(parent_pid)
        child = self._fetch_verified(child_pid, clo, chi)
        if not child.foster_pid:
            return
        sep = child.foster_sep
        fpid = child.foster_pid
        i = parent.children.index(child_pid)
        new_parent = _clone(parent)
        new_parent.children.insert(i + 1, fpid)
        new_parent.seps.insert(i, sep)
        if node_size(new_parent) > self.engine.body_size:
            self._split(parent_pid)
            return
        sys = self.engine.begin_system()
        new_child = _clone(child)
        new_child.foster_pid = 0
        new_child.foster_sep = None
        new_child.high = sep
        self.engine.page_edit(sys, parent_pid,
                              self._pad(encode_node(new_parent)))
        self.engine.page_edit(sys, child_pid,
                              self._pad(encode_node(new_child)))
        self.engine.txns.commit(sys)

    def _grow_root(self):
        """A foster child of the root grows the tree by one level."""
        sys = self.engine.begin_system()
        root_pid = self.engine.meta.root_pid
        root = self._read_node(root_pid)
        if not root.foster_pid:
            self.engine.txns.commit(sys)
            return
        sep = root.foster_sep
        fpid = root.foster_pid
        new_root_pid = self.engine.allocate_page(sys)
        self.engine.format_page(sys, new_root_pid, PageKind.BTREE_BRANCH)
        nr = Node(root.level + 1, MIN_KEY, INF_KEY)
        nr.children = [root_pid, fpid]
        nr.seps = [sep]
        old_root_new = _clone(root)
        old_root_new.foster_pid = 0
        old_root_new.foster_sep = None
        old_root_new.high = sep
        self.engine.page_edit(sys, new_root_pid,
                              self._pad(encode_node(nr)))
        self.engine.page_edit(sys, root_pid,
                              self._pad(encode_node(old_root_new)))
        self.engine.set_root(sys, new_root_pid)
        self.engine.txns.commit(sys)

    # -- scans and verification ------------------------------------------------

    def scan_all(self) -> list[tuple[bytes, bytes]]:
        """All live (key, value) pairs in order, via pool fetches."""
        out: list[tuple[bytes, bytes]] = []

        def walk(pid: int):
            node = self._read_node(pid)
            if node.level == 0:
                out.extend((r.key[1], r.value)
                           for r in node.records if not r.ghost)
            else:
                for c in node.children:
                    walk(c)
            if node.foster_pid:
                walk(node.foster_pid)

        if self.engine.meta.root_pid:
            walk(self.engine.meta.root_pid)
        return out

    def verify_tree(self) -> list[str]:
        """Exhaustive offline check of every in-page and cross-page
        invariant.  Report-only: reads durable/resident images without
        triggering recovery."""
        report: list[str] = []
        seen: dict[int, str] = {}

        def read(pid: int) -> Node | None:
            try:
                return decode_node(self.engine.page_body_for_verify(pid))
            except DetectedFailure as exc:
                report.append(f"node {pid}: unreadable ({exc.cause})")
                return None

        def walk(pid: int, lo: Key, hi: Key, incoming: str):
            if pid in seen:
                report.append(f"node {pid}: second incoming pointer "
                              f"({incoming}, already {seen[pid]})")
                return
            seen[pid] = incoming
            node = read(pid)
            if node is None:
                return
            if node.low != lo:
                report.append(f"node {pid}: low fence mismatch")
            if node.high != hi:
                report.append(f"node {pid}: high fence mismatch")
            if node.foster_pid:
                if node.foster_sep is None or \
                        not node.low < node.foster_sep < node.high:
                    report.append(f"node {pid}: foster separator out of "
                                  f"bounds")
            if node.level == 0:
                recs = node.records
                if len(recs) < 2:
                    report.append(f"node {pid}: fewer than two key values")
                else:
                    if recs[0].key != node.low:
                        report.append(f"node {pid}: first record is not the "
                                      f"low fence")
                    if recs[-1].key != node.own_upper:
                        report.append(f"node {pid}: last record is not the "
                                      f"upper bound")
                    if not recs[-1].ghost:
                        report.append(f"node {pid}: upper bound record is "
                                      f"not a ghost")
                for a, b in zip(recs, recs[1:]):
                    if not a.key < b.key:
                        report.append(f"node {pid}: records out of order")
                for r in recs:
                    if not (node.low <= r.key <= node.own_upper):
                        report.append(f"node {pid}: record outside fences")
            else:
                if len(node.children) != len(node.seps) + 1:
                    report.append(f"node {pid}: child/separator count "
                                  f"mismatch")
                bounds = node.bounds()
                for a, b in zip(bounds, bounds[1:]):
                    if not a < b:
                        report.append(f"node {pid}: separators out of order")
                for i, c in enumerate(node.children):
                    walk(c, bounds[i], bounds[i + 1], f"child of {pid}")
            if node.foster_pid:
                walk(node.foster_pid, node.foster_sep, node.high,
                     f"foster child of {pid}")

        if self.engine.meta.root_pid:
            walk(self.engine.meta.root_pid, MIN_KEY, INF_KEY, "root")
        return report


def _clone(node: Node) -> Node:
    n = Node(node.level, node.low, node.high, node.foster_pid,
             node.foster_sep)
    n.records = list(node.records)
    n.children = list(node.children)
    n.seps = list(node.seps)
    return n
