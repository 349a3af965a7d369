"""The Store: ties log, buffer pool, page store, recovery index, backup
store, and B-tree together behind one transactional facade.

Responsibilities kept here (and only here):

* the page-edit protocol: log an update record carrying byte deltas and an
  undo descriptor, advance the frame's PageLSN, mark it dirty;
* the clean protocol: write-ahead flush, durable page write, then a single
  recovery-index record (a periodic full backup instead, every
  ``backup_interval`` updates);
* the meta page (id 0): translation table, B-tree root, allocation cursor
  and recovery-index snapshot locations, mutated only through logged
  updates so restart can rebuild it from the log;
* checkpoints: clean exactly the frames dirty at begin, compress the
  recovery index, persist its snapshot in two pieces, force the log once;
* transaction rollback via per-transaction chains with compensation
  logging;
* the JSON-lines event stream used by the harness (no wall-clock fields,
  so replays are byte-identical).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace

from phoenix import heap
from phoenix.buffer_pool import BufferPool, Frame
from phoenix.disk import Disk
from phoenix.errors import (DetectedFailure, FailureClass, MediaFailure,
                            UsageError)
from phoenix.foster_btree import FosterBTree, empty_leaf_node, encode_node
from phoenix.meta import MetaState
from phoenix.page_store import (DATA_FILE, FaultInjector, FaultPlan,
                                PageStore, TranslationTable)
from phoenix.pages import (Page, PageKind, body_size as body_size_of,
                           apply_delta, byte_delta, page_from_bytes)
from phoenix.recovery_index import (NIL, TAG_BACKUP_PAGE, TAG_FORMAT_RECORD,
                                    TAG_IN_LOG_IMAGE, BackupStore,
                                    RecoveryIndex)
from phoenix.txn import Txn, TxnKind, TxnManager
from phoenix.wal import (NIL_LSN, NIL_PAGE, NIL_TXN, RecType,
                         UNDO_BTREE_DEL, UNDO_BTREE_PUT, UNDO_PHYSICAL, Wal,
                         decode_page_format, decode_update, encode_page_format,
                         encode_pri_update, encode_update)

# purpose byte of a page_image record
IMAGE_CONTENT = 1   # the image is the page's new content (PRI snapshots)
IMAGE_BACKUP = 2    # the image is a backup copy of an unchanged page


@dataclass
class StoreConfig:
    page_size: int = 8192
    pool_frames: int = 64
    backup_interval: int = 100     # updates between full-page backups
    backup_mode: str = "page"      # "page" (backup file) or "log" (image rec)
    redo_skip: bool = True         # skip redo of pages with current PRI entry
    io_delay_us: int = 0
    pri_compact_ratio: float = 0.02  # target entries / covered pages
    recovery_chain_limit: int = 100  # alarm threshold for chain length


class Store:
    """One open page store.  Public methods take the store lock; internal
    helpers assume it is held."""

    NIL_PAGE = NIL_PAGE

    def __init__(self, disk: Disk, config: StoreConfig,
                 fault_plan: FaultPlan | None = None):
        self.disk = disk
        self.config = config
        self.body_size = body_size_of(config.page_size)
        self.lock = threading.RLock()
        self.events: list[dict] = []
        self.event_sink = None           # optional file object (JSON lines)
        self.wal = Wal(disk)
        self.injector = FaultInjector(fault_plan, disk, config.page_size)
        self.injector.on_fire = self._on_fault_fired
        # table is replaced by meta bootstrap in create/open
        self.meta: MetaState | None = None
        self.page_store: PageStore | None = None
        self.backup = BackupStore(disk, config.page_size)
        self.pri = RecoveryIndex()
        self.pri.log_fn = self._log_pri_update
        self.txns = TxnManager(self.wal)
        self.pool = BufferPool(config.pool_frames, self._load_page,
                               self._clean_frame)
        self.btree = FosterBTree(self)
        # meta page (id 0) lives outside the pool, always in memory
        self.meta_body: bytes = b""
        self.meta_page_lsn: int = NIL_LSN
        self.meta_update_count: int = 0
        self.meta_dirty: bool = False
        self.restart_mode = False        # relaxes the stale cross-check
        self.checkpoints = 0
        self.recoveries = 0
        self.last_restart: dict | None = None
        self.closed = False

    # -- construction --------------------------------------------------------

    @classmethod
    def create(cls, disk: Disk, config: StoreConfig | None = None,
               initial_pages: int = 64,
               fault_plan: FaultPlan | None = None) -> "Store":
        config = config or StoreConfig()
        if initial_pages < 2:
            raise UsageError("store needs at least meta + root pages")
        store = cls(disk, config, fault_plan)
        table = TranslationTable(initial_pages)
        store.meta = MetaState(config.page_size, table, initial_pages)
        store.meta.root_pid = 1
        store.meta.next_page_id = 2
        store.page_store = PageStore(disk, config.page_size, table,
                                     store.injector)
        # one system transaction formats the whole initial extent
        sys = store.begin_system()
        f_meta = store.txns.log(
            sys, RecType.PAGE_FORMAT, 0, NIL_LSN,
            encode_page_format(int(PageKind.META), 1))
        f_root = store.txns.log(
            sys, RecType.PAGE_FORMAT, 1, NIL_LSN,
            encode_page_format(int(PageKind.BTREE_LEAF), 2))
        f_free = NIL_LSN
        if initial_pages > 2:
            f_free = store.txns.log(
                sys, RecType.PAGE_FORMAT, 2, NIL_LSN,
                encode_page_format(int(PageKind.FREE), initial_pages))
        store.pri.record_format(0, 1, f_meta)
        store.pri.record_format(1, 2, f_root)
        if initial_pages > 2:
            store.pri.record_format(2, initial_pages, f_free)
        # the initial meta body is logged as a delta from the formatted
        # (all-zero) page so full log replay can rebuild page 0
        store.meta_body = store.meta.encode_body(store.body_size)
        lsn0 = store.txns.log(
            sys, RecType.UPDATE, 0, f_meta,
            encode_update(byte_delta(b"\x00" * store.body_size,
                                     store.meta_body)))
        store.txns.commit(sys)
        store.meta_page_lsn = lsn0
        store.meta_update_count = 1
        images = [Page(0, PageKind.META, lsn0, 1,
                       store.meta_body).to_bytes(config.page_size),
                  store._formatted_page(1, PageKind.BTREE_LEAF,
                                        f_root).to_bytes(config.page_size)]
        for pid in range(2, initial_pages):
            images.append(store._formatted_page(
                pid, PageKind.FREE, f_free).to_bytes(config.page_size))
        disk.write(DATA_FILE, 0, b"".join(images))
        store.checkpoint()
        store.emit("store_created", pages=initial_pages)
        return store

    @classmethod
    def open(cls, disk: Disk, config: StoreConfig | None = None,
             fault_plan: FaultPlan | None = None) -> "Store":
        """Open an existing store, running restart recovery."""
        from phoenix.recovery import restart
        config = config or StoreConfig()
        store = cls(disk, config, fault_plan)
        restart(store)
        return store

    # -- events ----------------------------------------------------------------

    def emit(self, event: str, **fields):
        doc = {"event": event, **fields}
        self.events.append(doc)
        if self.event_sink is not None:
            self.event_sink.write(json.dumps(doc, sort_keys=True) + "\n")

    def _on_fault_fired(self, pid: int, count: int, mode: str):
        self.emit("fault_injected", page=pid, read_count=count, mode=mode)

    # -- page construction ------------------------------------------------------

    def _formatted_page(self, pid: int, kind: PageKind, format_lsn: int) \
            -> Page:
        """Deterministic image of a freshly formatted page; redo of a
        page_format record must rebuild exactly this."""
        kind = PageKind(kind)
        if kind == PageKind.BTREE_LEAF:
            body = encode_node(empty_leaf_node())
            body += b"\x00" * (self.body_size - len(body))
        elif kind == PageKind.HEAP:
            body = heap.empty_body(self.body_size)
        else:  # FREE, BTREE_BRANCH, PRI: populated by the first update
            body = b"\x00" * self.body_size
        return Page(pid, kind, format_lsn, 0, body)

    # -- buffer pool callbacks ---------------------------------------------------

    def _load_page(self, pid: int) -> Page:
        """Pool loader: verified read, transparent single-page recovery,
        and (outside restart) the recovery-index PageLSN cross-check."""
        try:
            page = self.page_store.read_page(pid)
        except DetectedFailure as failure:
            return self._recover_for_load(pid, failure)
        if not self.restart_mode:
            if self.pri.verify_on_read(pid, page.page_lsn) != "ok":
                return self._recover_for_load(
                    pid, DetectedFailure(pid, "stale_page_lsn"))
        return page

    def _recover_for_load(self, pid: int, failure: DetectedFailure) -> Page:
        from phoenix.recovery import recover_page
        self.emit("failure_detected", page=pid, cause=failure.cause,
                  failure_class=FailureClass.SINGLE_PAGE.value)
        return recover_page(self, pid, failure.cause)

    def recover_page(self, pid: int):
        """Recover a page detected bad outside the loader (e.g. a fence-key
        mismatch found after a checksum-valid read)."""
        return self.recover_page_failed(pid, DetectedFailure(pid, "io_error"))

    def recover_page_failed(self, pid: int, failure: DetectedFailure):
        from phoenix.recovery import recover_page
        frame = self.pool.resident(pid)
        if frame is not None and frame.pin_count:
            raise UsageError(f"recovery of pinned page {pid}")
        self.pool.drop(pid)
        self.emit("failure_detected", page=pid, cause=failure.cause,
                  failure_class=FailureClass.SINGLE_PAGE.value)
        page = recover_page(self, pid, failure.cause)
        return self.pool.install(pid, page)

    def _clean_frame(self, frame: Frame):
        """Make a dirty frame clean: write-ahead flush, durable write, then
        one recovery-index record — or a fresh backup every
        ``backup_interval`` updates (which resets the update counter and
        leaves the index entry's last_lsn nil)."""
        page = frame.page
        self.wal.flush(page.page_lsn, forced=False)
        take_backup = page.update_count >= self.config.backup_interval
        if take_backup:
            page = replace(page, update_count=0)
            frame.page = page
        self.page_store.write_page(page)
        if take_backup:
            self._take_backup(page)
        else:
            self.pri.record_write(page.id, page.page_lsn)
        frame.dirty = False
        frame.recovery_lsn = NIL_LSN

    def _take_backup(self, page: Page):
        """Install a fresh single-page backup locator for an already
        durably written page image."""
        backup_lsn = page.page_lsn  # exact PageLSN inside the image
        if self.config.backup_mode == "log":
            lsn = self.wal.append(
                RecType.PAGE_IMAGE, NIL_TXN, page.id,
                prev_page_lsn=page.page_lsn,
                payload=bytes([IMAGE_BACKUP])
                + page.to_bytes(self.config.page_size))
            displaced = self.pri.record_backup(
                page.id, page.id + 1, TAG_IN_LOG_IMAGE, lsn, backup_lsn)
        else:
            slot = self.backup.alloc(1)
            self.backup.write(slot, page)
            displaced = self.pri.record_backup(
                page.id, page.id + 1, TAG_BACKUP_PAGE, slot, backup_lsn)
        self._free_displaced(displaced)

    def _free_displaced(self, displaced):
        for lo, hi, tag, value in displaced:
            if tag == TAG_BACKUP_PAGE:
                for s in range(value, value + (hi - lo)):
                    self.backup.free(s)

    def _log_pri_update(self, pid: int, page_lsn: int, range_hi: int,
                        is_write: bool, locator):
        """Recovery-index maintenance is logged as a single self-contained
        record carrying no transaction id (nothing to commit or undo)."""
        self.wal.append(RecType.PRI_UPDATE,
                        payload=encode_pri_update(pid, page_lsn, range_hi,
                                                  is_write, locator))

    # -- transactions --------------------------------------------------------------

    def begin(self) -> Txn:
        with self.lock:
            return self.txns.begin(TxnKind.USER)

    def begin_system(self) -> Txn:
        return self.txns.begin(TxnKind.SYSTEM)

    def commit(self, txn: Txn) -> int:
        with self.lock:
            lsn = self.txns.commit(txn)
            self.emit("txn_commit", txn=txn.txn_id)
            return lsn

    def abort(self, txn: Txn) -> int:
        with self.lock:
            self.rollback_txn(txn)
            lsn = self.txns.finish_abort(txn)
            self.emit("txn_abort", txn=txn.txn_id)
            return lsn

    def rollback_txn(self, txn: Txn, from_lsn: int | None = None):
        """Undo every update of txn, newest first, logging compensation
        records that chain past the undone record so rollback never repeats
        work after a crash."""
        lsn = txn.last_lsn if from_lsn is None else from_lsn
        while lsn != NIL_LSN:
            rec = self.wal.read(lsn)
            if rec.type == RecType.UPDATE:
                self._undo_record(txn, rec)
            # compensation records skip backward past the record they undid
            lsn = rec.prev_txn_lsn

    def _undo_record(self, txn: Txn, rec):
        deltas, undo_kind, undo = decode_update(rec.payload)
        if undo_kind == UNDO_BTREE_PUT:
            _, key, had_old, old_value = undo
            self.btree.undo_put(txn, key, had_old, old_value,
                                prev_txn_override=rec.prev_txn_lsn)
        elif undo_kind == UNDO_BTREE_DEL:
            _, key, _, old_value = undo
            self.btree.undo_delete(txn, key, old_value,
                                   prev_txn_override=rec.prev_txn_lsn)
        elif rec.page_id == 0:
            self._meta_undo(txn, rec, deltas)
        else:
            self._physical_undo(txn, rec, deltas)

    def _physical_undo(self, txn: Txn, rec, deltas):
        frame = self.pool.fix(rec.page_id)
        try:
            new_body = apply_delta(frame.page.body, deltas, undo=True)
            self.page_edit(txn, rec.page_id, new_body,
                           rtype=RecType.COMPENSATION,
                           prev_txn_override=rec.prev_txn_lsn,
                           frame=frame)
        finally:
            self.pool.unfix(frame)

    def _meta_undo(self, txn: Txn, rec, deltas):
        new_body = apply_delta(self.meta_body, deltas, undo=True)
        lsn = self.txns.log(txn, RecType.COMPENSATION, 0, self.meta_page_lsn,
                            encode_update(byte_delta(self.meta_body,
                                                     new_body)),
                            prev_txn_override=rec.prev_txn_lsn)
        self._install_meta_body(new_body, lsn)

    # -- logged page edits -----------------------------------------------------------

    def page_edit(self, txn: Txn, pid: int, new_body: bytes,
                  rtype: RecType = RecType.UPDATE,
                  undo_kind: int = UNDO_PHYSICAL, key: bytes = b"",
                  had_old: bool = False, old_value: bytes = b"",
                  prev_txn_override: int | None = None,
                  frame: Frame | None = None) -> int | None:
        """The one write path for data pages: log the byte deltas, advance
        PageLSN, dirty the frame.  Returns the record lsn (None: no-op)."""
        own_frame = frame is None
        if own_frame:
            frame = self.pool.fix(pid)
        try:
            old_body = frame.page.body
            if old_body == new_body:
                return None
            if len(new_body) != self.body_size:
                raise UsageError("page body size mismatch")
            deltas = byte_delta(old_body, new_body)
            if rtype == RecType.COMPENSATION:
                # compensation is redo-only; no undo descriptor needed
                payload = encode_update(deltas)
            else:
                payload = encode_update(deltas, undo_kind, key, had_old,
                                        old_value)
            lsn = self.txns.log(txn, rtype, pid, frame.page.page_lsn,
                                payload, prev_txn_override=prev_txn_override)
            frame.page = Page(pid, frame.page.kind, lsn,
                              frame.page.update_count + 1, new_body)
            self.pool.mark_dirty(frame, lsn)
            return lsn
        finally:
            if own_frame:
                self.pool.unfix(frame)

    def meta_edit(self, txn: Txn, mutate) -> int | None:
        """Apply a mutation to the meta state, logging it as an update
        record on page 0 (so restart rebuilds the translation table and
        allocation state from the log)."""
        old_body = self.meta_body
        mutate()
        new_body = self.meta.encode_body(self.body_size)
        if new_body == old_body:
            return None
        lsn = self.txns.log(txn, RecType.UPDATE, 0, self.meta_page_lsn,
                            encode_update(byte_delta(old_body, new_body)))
        self._install_meta_body(new_body, lsn)
        return lsn

    def _install_meta_body(self, new_body: bytes, lsn: int):
        self.meta_body = new_body
        self.meta_page_lsn = lsn
        self.meta_update_count += 1
        self.meta_dirty = True
        # undo/redo may have changed decoded state; refresh the mirrors
        refreshed = MetaState.decode_body(new_body)
        refreshed.page_size = self.config.page_size
        self.meta = refreshed
        self.page_store.table = refreshed.table

    def apply_meta_record(self, lsn: int, deltas):
        """Redo a page-0 update during restart analysis (the meta page must
        be current before any other page is read through the table)."""
        if lsn <= self.meta_page_lsn:
            return
        new_body = apply_delta(self.meta_body, deltas)
        self.meta_body = new_body
        self.meta_page_lsn = lsn
        self.meta_update_count += 1
        self.meta_dirty = True
        refreshed = MetaState.decode_body(new_body)
        refreshed.page_size = self.config.page_size
        self.meta = refreshed
        self.page_store.table = refreshed.table

    def write_meta(self):
        """Durably write the meta page and record the write in the
        recovery index (page 0 is covered like any other)."""
        if not self.meta_dirty:
            return
        self.wal.flush(self.meta_page_lsn, forced=False)
        count = self.meta_update_count
        take_backup = count >= self.config.backup_interval
        if take_backup:
            count = 0
            self.meta_update_count = 0
        page = Page(0, PageKind.META, self.meta_page_lsn, count,
                    self.meta_body)
        self.page_store.write_page(page)
        if take_backup:
            self._take_backup(page)
        else:
            self.pri.record_write(0, self.meta_page_lsn)
        self.meta_dirty = False

    # -- allocation and formatting ------------------------------------------------------

    def allocate_page(self, txn: Txn) -> int:
        """Take the next page id (extending the slot array if needed)."""
        pid = self.meta.next_page_id

        def mutate():
            self.meta.next_page_id = pid + 1
            if pid >= self.meta.table.slot_count:
                self.meta.table.slot_count = pid + 1

        self.meta_edit(txn, mutate)
        return pid

    def format_page(self, txn: Txn, pid: int, kind: PageKind) -> Frame:
        """Log a format record (which doubles as the page's first backup)
        and install the fresh page, dirty, in the pool."""
        lsn = self.txns.log(txn, RecType.PAGE_FORMAT, pid, NIL_LSN,
                            encode_page_format(int(kind), pid + 1))
        page = self._formatted_page(pid, kind, lsn)
        frame = self.pool.install(pid, page, dirty=True, recovery_lsn=lsn)
        self.pri.record_format(pid, pid + 1, lsn)
        return frame

    def set_root(self, txn: Txn, pid: int):
        self.meta_edit(txn, lambda: setattr(self.meta, "root_pid", pid))

    # -- heap operations ---------------------------------------------------------------

    def heap_alloc(self) -> int:
        with self.lock:
            sys = self.begin_system()
            pid = self.allocate_page(sys)
            self.format_page(sys, pid, PageKind.HEAP)
            self.txns.commit(sys)
            self.emit("heap_page_allocated", page=pid)
            return pid

    def heap_put(self, txn: Txn, pid: int, slot: int, value: bytes | None):
        with self.lock:
            frame = self.pool.fix(pid)
            try:
                if frame.page.kind != PageKind.HEAP:
                    raise UsageError(f"page {pid} is not a heap page")
                if not 0 <= slot < heap.slots_per_page(self.body_size):
                    raise UsageError(f"heap slot {slot} out of range")
                new_body = heap.write_slot(frame.page.body, slot, value)
                self.page_edit(txn, pid, new_body, frame=frame)
            finally:
                self.pool.unfix(frame)

    def heap_get(self, pid: int, slot: int) -> bytes | None:
        with self.lock:
            frame = self.pool.fix(pid)
            try:
                if frame.page.kind != PageKind.HEAP:
                    raise UsageError(f"page {pid} is not a heap page")
                return heap.read_slot(frame.page.body, slot)
            finally:
                self.pool.unfix(frame)

    # -- B-tree facade ------------------------------------------------------------------

    def put(self, txn: Txn, key: bytes, value: bytes):
        with self.lock:
            self.btree.put(txn, key, value)

    def insert(self, txn: Txn, key: bytes, value: bytes):
        with self.lock:
            self.btree.insert(txn, key, value)

    def delete(self, txn: Txn, key: bytes):
        with self.lock:
            self.btree.delete(txn, key)

    def get(self, key: bytes) -> bytes | None:
        with self.lock:
            return self.btree.get(key)

    def scan_all(self) -> list[tuple[bytes, bytes]]:
        with self.lock:
            return self.btree.scan_all()

    # -- checkpoints ----------------------------------------------------------------------

    def checkpoint(self) -> dict:
        """Fuzzy checkpoint: clean exactly the frames dirty at begin,
        compress and persist the recovery index, write the meta page, and
        force the log through the end record."""
        with self.lock:
            begin_lsn = self.wal.append(RecType.CHECKPOINT_BEGIN)
            att = self.txns.table_snapshot()
            dirty_at_begin = list(self.pool.dirty_pids())
            meta_dirty_at_begin = self.meta_dirty
            cleaned = []
            for pid in dirty_at_begin:
                frame = self.pool.resident(pid)
                if frame is not None and frame.dirty:
                    self._clean_frame(frame)
                    cleaned.append(pid)
            self._compress_pri()
            self._persist_pri()
            self.write_meta()
            dpt = {pid: f.recovery_lsn
                   for pid, f in self.pool.frames.items() if f.dirty}
            from phoenix.wal import encode_checkpoint_end
            self.wal.append(RecType.CHECKPOINT_END,
                            payload=encode_checkpoint_end(begin_lsn, att,
                                                          dpt))
            self.wal.flush()
            self.checkpoints += 1
            self.emit("checkpoint", frames_cleaned=sorted(cleaned),
                      meta_written=meta_dirty_at_begin,
                      pri_entries=len(self.pri.entries))
            return {"frames_cleaned": cleaned,
                    "meta_written": meta_dirty_at_begin}

    def _compress_pri(self):
        """Keep the recovery index small: merge neighbors, and when the
        entry count still exceeds the target ratio, take ranged backups of
        runs of clean pages into contiguous backup slots so whole runs
        collapse into single entries."""
        self.pri.merge_adjacent()
        covered = self.pri.cover_hi()
        target = max(8, int(covered * self.config.pri_compact_ratio))
        if len(self.pri.entries) <= target:
            return
        runs = self._compactable_runs()
        runs.sort(key=lambda r: r[0] - r[1])  # longest first
        for lo, hi in runs:
            if len(self.pri.entries) <= target:
                break
            if hi - lo < 2:
                continue
            self._range_backup(lo, hi)
        self.pri.merge_adjacent()

    def _compactable_runs(self) -> list[tuple[int, int]]:
        """Maximal runs of adjacent entries whose pages are all clean (or
        non-resident), so their durable images are current and safe to
        back up."""
        runs = []
        run_lo = None
        pos = None
        for e in self.pri.entries:
            ok = all(not (f := self.pool.resident(pid)) or not f.dirty
                     for pid in range(e.lo, e.hi))
            ok = ok and not (e.lo == 0)  # leave the meta page alone
            if ok and run_lo is not None and e.lo == pos:
                pos = e.hi
            elif ok:
                if run_lo is not None:
                    runs.append((run_lo, pos))
                run_lo, pos = e.lo, e.hi
            else:
                if run_lo is not None:
                    runs.append((run_lo, pos))
                run_lo = None
        if run_lo is not None:
            runs.append((run_lo, pos))
        return runs

    def _range_backup(self, lo: int, hi: int):
        """Back up the durable images of [lo, hi) into contiguous backup
        slots and install one ranged locator."""
        pages = []
        for pid in range(lo, hi):
            raw = self.page_store.read_page_raw(pid)
            try:
                pages.append(page_from_bytes(raw, expected_id=pid))
            except DetectedFailure:
                return  # leave this run to single-page recovery
        # pages in the run have distinct PageLSNs; the entry records no
        # per-page value (0), so the cross-check relies on last_lsn alone
        backup_lsn = 0
        base = self.backup.alloc(hi - lo)
        for i, page in enumerate(pages):
            if page.update_count:
                page = replace(page, update_count=0)
                self.page_store.write_page(page)
            self.backup.write(base + i, page)
        displaced = self.pri.record_backup(lo, hi, TAG_BACKUP_PAGE, base,
                                           backup_lsn)
        self._free_displaced(displaced)

    def _persist_pri(self):
        """Serialize the recovery index into durable PRI pages, in two
        pieces arranged so no PRI page holds the entry that covers itself.
        The pages are written as full in-log images (they bypass the
        buffer pool) and their locators are logged afterwards, where
        restart's replay picks them up."""
        sys = self.begin_system()
        piece_of = {}
        for k in (0, 1):
            for pid in self.meta.pri_pages[k]:
                piece_of[pid] = k
        # make sure enough pages exist for the current entry count; sizing
        # is iterated because new pages add entries (and meta edits)
        for _ in range(4):
            pieces = self.pri.partition_for_pieces(piece_of)
            blobs = [self.pri.serialize(p) for p in pieces]
            cap = self.body_size - 8
            need = [max(1, -(-len(b) // cap)) for b in blobs]
            grown = False
            for k in (0, 1):
                while len(self.meta.pri_pages[k]) < need[k]:
                    pid = self.allocate_page(sys)
                    self.format_page(sys, pid, PageKind.PRI)
                    # PRI pages are not pool-managed; evict the fresh frame
                    frame = self.pool.resident(pid)
                    if frame is not None:
                        frame.dirty = False
                        self.pool.drop(pid)
                    lst = self.meta.pri_pages[k]
                    self.meta_edit(sys, lambda l=lst, p=pid: l.append(p))
                    piece_of[pid] = k
                    grown = True
            if not grown:
                break
        for k in (0, 1):
            blob = blobs[k]
            for i, pid in enumerate(self.meta.pri_pages[k]):
                chunk = blob[i * cap:(i + 1) * cap]
                body = (len(blob).to_bytes(4, "little")
                        + i.to_bytes(4, "little") + chunk)
                body += b"\x00" * (self.body_size - len(body))
                lsn = self.wal.end
                page = Page(pid, PageKind.PRI, lsn, 0, body)
                self.wal.append(
                    RecType.PAGE_IMAGE, NIL_TXN, pid,
                    payload=bytes([IMAGE_CONTENT])
                    + page.to_bytes(self.config.page_size))
                self.wal.flush(lsn, forced=False)
                self.page_store.write_page(page)
                displaced = self.pri.record_backup(
                    pid, pid + 1, TAG_IN_LOG_IMAGE, lsn, lsn)
                self._free_displaced(displaced)
        self.txns.commit(sys)

    # -- verification and introspection -----------------------------------------------------

    def page_body_for_verify(self, pid: int) -> bytes:
        """Body of a page for offline verification: the resident frame if
        any, else the durable image (checked, but without triggering
        recovery or fault injection)."""
        frame = self.pool.resident(pid)
        if frame is not None:
            return frame.page.body
        raw = self.page_store.read_page_raw(pid)
        return page_from_bytes(raw, expected_id=pid).body

    def verify_store(self) -> list[str]:
        """Offline sweep: checksum every page, check recovery-index
        coverage and the tree invariants.  Report-only."""
        with self.lock:
            report = []
            try:
                self.pri.check_coverage()
            except AssertionError as exc:
                report.append(f"recovery index: {exc}")
            if self.pri.cover_hi() < self.meta.next_page_id:
                report.append("recovery index does not cover all pages")
            for pid in range(self.meta.next_page_id):
                frame = self.pool.resident(pid)
                if frame is not None:
                    continue
                raw = self.page_store.read_page_raw(pid)
                try:
                    page_from_bytes(raw, expected_id=pid)
                except DetectedFailure as exc:
                    report.append(f"page {pid}: {exc.cause}")
            report.extend(self.btree.verify_tree())
            self.page_store.table.check()
            return report

    def counters(self) -> dict:
        return {
            "page_reads": self.page_store.page_reads,
            "page_writes": self.page_store.page_writes,
            "backup_reads": self.backup.backup_reads,
            "backup_writes": self.backup.backup_writes,
            "log_record_reads": self.wal.record_reads,
            "log_flushes": self.wal.flush_count,
            "forced_log_flushes": self.wal.forced_flushes,
            "user_commits": self.txns.user_commits,
            "checkpoints": self.checkpoints,
            "recoveries": self.recoveries,
            "pool_hits": self.pool.hits,
            "pool_misses": self.pool.misses,
            "pool_evictions": self.pool.evictions,
            "pri_entries": len(self.pri.entries),
        }

    # -- teardown -------------------------------------------------------------------------

    def close(self):
        """Flush everything via a final checkpoint."""
        with self.lock:
            if self.closed:
                return
            self.checkpoint()
            self.closed = True
