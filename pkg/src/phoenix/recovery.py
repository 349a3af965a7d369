"""Recovery: single-page repair, restart after a crash, and full media
recovery.

Single-page repair of page P:

1. look up P's entry in the recovery index;
2. materialize the backup image named by its locator (an explicit backup
   page, a page-format record, or a full page image in the log) — exactly
   one backup read;
3. walk P's per-page log chain backward from the entry's last PageLSN down
   to the backup horizon, pushing records onto a stack (at most
   ``backup_interval`` log record reads, by construction);
4. replay the stack forward, verifying each record's prev_page_lsn against
   the evolving PageLSN;
5. relocate P to a fresh physical slot (the old one joins the bad-block
   set), write it durably, and record the write in the recovery index.

The calling transaction is delayed, never aborted.

Restart: analysis scans from the last complete checkpoint collecting redo
requirements per page and replaying recovery-index records; a page's
requirement is dropped when a later index record already covers its last
update (so redo reads only pages whose index entry lags).  Redo applies
records with the PageLSN test and, for pages found already current whose
index entry lags (the write happened but the crash lost the index record),
logs the missing index record.  Undo rolls back loser transactions.

Media recovery ignores the recovery index and rebuilds every page from
backups plus a full log scan.
"""

from __future__ import annotations

from dataclasses import replace

from phoenix.errors import DetectedFailure, MediaFailure
from phoenix.meta import MetaState
from phoenix.pages import Page, PageKind, apply_delta, page_from_bytes
from phoenix.recovery_index import (NIL, TAG_BACKUP_PAGE, TAG_FORMAT_RECORD,
                                    TAG_IN_LOG_IMAGE, PriEntry, RecoveryIndex)
from phoenix.txn import Txn, TxnKind, TxnState
from phoenix.wal import (FILE_HEADER_SIZE, NIL_LSN, NIL_PAGE, NIL_TXN,
                         RecType, decode_checkpoint_end, decode_page_format,
                         decode_pri_update, decode_update)

_CONTENT_TYPES = (RecType.UPDATE, RecType.COMPENSATION)


# -- single-page recovery -----------------------------------------------------


def _materialize_backup(store, entry: PriEntry, pid: int) \
        -> tuple[Page, int]:
    """Reconstruct the newest backup image of pid from the entry's
    locator.  Returns (page, backup_reads) with backup_reads == 1."""
    if entry.tag == TAG_BACKUP_PAGE:
        page = store.backup.read(entry.slot_for(pid), pid)
    elif entry.tag == TAG_FORMAT_RECORD:
        rec = store.wal.read(entry.value)
        if rec.type != RecType.PAGE_FORMAT:
            raise MediaFailure("format locator points at a non-format "
                               "record", pid)
        kind, range_hi = decode_page_format(rec.payload)
        if not (rec.page_id <= pid < range_hi):
            raise MediaFailure("format locator does not cover page", pid)
        page = store._formatted_page(pid, PageKind(kind), rec.lsn)
    elif entry.tag == TAG_IN_LOG_IMAGE:
        rec = store.wal.read(entry.value)
        if rec.type != RecType.PAGE_IMAGE or rec.page_id != pid:
            raise MediaFailure("image locator mismatch", pid)
        page = page_from_bytes(rec.payload[1:], expected_id=pid)
    else:
        raise MediaFailure(f"unknown backup locator tag {entry.tag}", pid)
    return page, 1


def rebuild_page(store, pid: int) -> tuple[Page, int, int]:
    """Side-effect-free reconstruction of pid's newest durably logged
    state: backup image plus forward replay of its per-page log chain.
    Returns (page, backup_reads, log_reads)."""
    entry = store.pri.lookup(pid).copy()
    page, backup_reads = _materialize_backup(store, entry, pid)
    horizon = page.page_lsn   # records after the image have larger lsns
    stack = []
    log_reads = 0
    lsn = entry.last_lsn
    while lsn != NIL_LSN and lsn > horizon:
        rec = store.wal.read(lsn)
        log_reads += 1
        if rec.page_id != pid:
            raise MediaFailure(
                f"per-page chain of {pid} reached a record for "
                f"{rec.page_id}", pid)
        stack.append(rec)
        lsn = rec.prev_page_lsn
    for rec in reversed(stack):
        if rec.type == RecType.PAGE_FORMAT:
            kind, _ = decode_page_format(rec.payload)
            page = store._formatted_page(pid, PageKind(kind), rec.lsn)
            continue
        if rec.type not in _CONTENT_TYPES:
            raise MediaFailure(
                f"unexpected {rec.type.name} in per-page chain", pid)
        if rec.prev_page_lsn != page.page_lsn:
            raise MediaFailure(
                f"per-page chain of {pid} broken at lsn {rec.lsn}: "
                f"expected base {rec.prev_page_lsn}, have {page.page_lsn}",
                pid)
        deltas, _, _ = decode_update(rec.payload)
        page = Page(pid, page.kind, rec.lsn, page.update_count + 1,
                    apply_delta(page.body, deltas))
    if entry.last_lsn != NIL_LSN and page.page_lsn != entry.last_lsn:
        raise MediaFailure(
            f"replay of {pid} ended at lsn {page.page_lsn}, index expected "
            f"{entry.last_lsn}", pid)
    return page, backup_reads, log_reads


def recover_page(store, pid: int, cause: str) -> Page:
    """Recover a single failed page and return its repaired image, durably
    written at a fresh physical slot."""
    page, backup_reads, log_reads = rebuild_page(store, pid)
    if log_reads > store.config.recovery_chain_limit:
        raise MediaFailure(
            f"per-page chain of {pid} exceeds the recovery budget "
            f"({log_reads} records)", pid)
    # retire the failed slot; the mapping change is a logged meta update
    sys = store.begin_system()
    new_slot = [None]

    def mutate():
        new_slot[0] = store.page_store.relocate(pid)

    store.meta_edit(sys, mutate)
    store.txns.commit(sys)
    # same discipline as cleaning: flush, write, one index record
    store.wal.flush(page.page_lsn, forced=False)
    if page.update_count >= store.config.backup_interval:
        page = replace(page, update_count=0)
        store.page_store.write_page(page)
        store._take_backup(page)
    else:
        store.page_store.write_page(page)
        store.pri.record_write(pid, page.page_lsn)
    store.recoveries += 1
    store.emit("page_recovered", page=pid, cause=cause,
               new_slot=new_slot[0], backup_reads=backup_reads,
               log_reads=log_reads, page_lsn=page.page_lsn)
    return page


# -- restart ------------------------------------------------------------------


def _find_last_checkpoint(store):
    for rec in store.wal.scan_backward():
        if rec.type == RecType.CHECKPOINT_END:
            return decode_checkpoint_end(rec.payload)
    return None


def _load_meta(store):
    """Bootstrap the meta page straight from its durable slot (page 0 is
    always physical slot 0)."""
    raw = store.disk.read_quiet(
        "data.db", 0, store.config.page_size)
    try:
        page = page_from_bytes(raw, expected_id=0)
    except DetectedFailure as exc:
        raise MediaFailure(f"meta page unreadable ({exc.cause})", 0) from exc
    meta = MetaState.decode_body(page.body)
    meta.page_size = store.config.page_size
    store.meta = meta
    store.meta_body = page.body
    store.meta_page_lsn = page.page_lsn
    store.meta_update_count = page.update_count
    store.meta_dirty = False
    from phoenix.page_store import PageStore
    store.page_store = PageStore(store.disk, store.config.page_size,
                                 meta.table, store.injector)


def _load_pri(store):
    """Reassemble the recovery index from its snapshot pages.  A snapshot
    page that fails verification is itself recovered from the other
    piece's entries (no snapshot page stores its own locator)."""
    cap = store.body_size - 8
    raw_pages: dict[int, bytes] = {}
    failed: list[int] = []
    for k in (0, 1):
        for pid in store.meta.pri_pages[k]:
            raw = store.page_store.read_page_raw(pid)
            try:
                raw_pages[pid] = page_from_bytes(raw, expected_id=pid).body
            except DetectedFailure:
                failed.append(pid)

    def assemble(pids: list[int]) -> list[PriEntry]:
        if not pids:
            return []
        chunks = []
        total = None
        for pid in pids:
            body = raw_pages[pid]
            total = int.from_bytes(body[0:4], "little")
            chunks.append(body[8:8 + cap])
        blob = b"".join(chunks)[:total]
        return RecoveryIndex.deserialize_entries(blob)

    if failed:
        # recover failed snapshot pages from the surviving piece
        surviving: list[PriEntry] = []
        for k in (0, 1):
            if all(pid in raw_pages for pid in store.meta.pri_pages[k]):
                surviving.extend(assemble(store.meta.pri_pages[k]))
        by_pid = {e.lo: e for e in surviving if e.hi - e.lo == 1}
        for pid in failed:
            entry = by_pid.get(pid)
            if entry is None or entry.tag != TAG_IN_LOG_IMAGE:
                raise MediaFailure(
                    "recovery-index snapshot unrecoverable", pid)
            rec = store.wal.read(entry.value)
            page = page_from_bytes(rec.payload[1:], expected_id=pid)
            raw_pages[pid] = page.body
            store.emit("pri_page_recovered", page=pid)
    pieces = [assemble(store.meta.pri_pages[k]) for k in (0, 1)]
    store.pri.log_fn = None
    store.pri.load_pieces(pieces)


def restart(store) -> dict:
    """Crash recovery: analysis, redo (reading only pages whose index
    entry lags), undo of losers, then a checkpoint."""
    store.restart_mode = True
    store.pri.log_fn = None
    ckpt = _find_last_checkpoint(store)
    if ckpt is None:
        raise MediaFailure("no complete checkpoint in the log", NIL_PAGE)
    begin_lsn, att0, _ = ckpt
    _load_meta(store)

    # --- analysis ---
    req: dict[int, int] = {}          # page -> earliest lsn needing redo
    att: dict[int, int] = dict(att0)  # txn -> last lsn
    pri_replay = []                   # recovery-index records, in order
    losers_meta: list = []            # page-0 records needing inline redo
    for rec in store.wal.scan(begin_lsn):
        if rec.txn_id != NIL_TXN:
            if rec.type in (RecType.TXN_COMMIT, RecType.SYS_COMMIT,
                            RecType.TXN_ABORT):
                att.pop(rec.txn_id, None)
            else:
                att[rec.txn_id] = rec.lsn
        if rec.type in _CONTENT_TYPES:
            if rec.page_id == 0:
                deltas, _, _ = decode_update(rec.payload)
                store.apply_meta_record(rec.lsn, deltas)
            elif rec.page_id != NIL_PAGE:
                req.setdefault(rec.page_id, rec.lsn)
        elif rec.type == RecType.PAGE_FORMAT:
            req[rec.page_id] = rec.lsn
        elif rec.type == RecType.PAGE_IMAGE:
            if rec.payload[0] == 1:   # content image (PRI snapshot page)
                req[rec.page_id] = rec.lsn
        elif rec.type == RecType.PRI_UPDATE:
            fields = decode_pri_update(rec.payload)
            pri_replay.append(fields)
            pid, page_lsn, _, is_write, _ = fields
            if store.config.redo_skip and is_write and pid in req \
                    and req[pid] <= page_lsn:
                del req[pid]

    # --- recovery-index reconstruction ---
    _load_pri(store)
    for fields in pri_replay:
        store.pri.apply_logged(*fields)
    store.pri.log_fn = store._log_pri_update
    store.backup.reset_allocator(store.pri.backup_slots_in_use())
    req.pop(0, None)  # the meta page was replayed inline
    for k in (0, 1):  # snapshot pages were reassembled above
        for pid in store.meta.pri_pages[k]:
            if pid in req:
                _redo_pri_page(store, pid)
                req.pop(pid)

    # --- redo ---
    pages_redone: set[int] = set()
    compensated: list[int] = []
    if req:
        redo_from = min(req.values())
        touched: dict[int, bool] = {}   # pid -> any record applied
        for rec in store.wal.scan(redo_from):
            pid = rec.page_id
            if pid not in req or rec.lsn < req[pid]:
                continue
            if rec.type == RecType.PAGE_FORMAT:
                kind, _ = decode_page_format(rec.payload)
                page = store._formatted_page(pid, PageKind(kind), rec.lsn)
                store.pool.install(pid, page, dirty=True,
                                   recovery_lsn=rec.lsn)
                touched[pid] = True
                pages_redone.add(pid)
            elif rec.type in _CONTENT_TYPES:
                frame = store.pool.fix(pid)
                try:
                    pages_redone.add(pid)
                    touched.setdefault(pid, False)
                    page = frame.page
                    if page.page_lsn >= rec.lsn:
                        continue
                    if rec.prev_page_lsn != page.page_lsn:
                        raise MediaFailure(
                            f"redo of {pid} at lsn {rec.lsn} found PageLSN "
                            f"{page.page_lsn}, expected {rec.prev_page_lsn}",
                            pid)
                    deltas, _, _ = decode_update(rec.payload)
                    frame.page = Page(pid, page.kind, rec.lsn,
                                      page.update_count + 1,
                                      apply_delta(page.body, deltas))
                    store.pool.mark_dirty(frame, rec.lsn)
                    touched[pid] = True
                finally:
                    store.pool.unfix(frame)
        # pages found already current: the write survived but its index
        # record did not; log the missing record now
        for pid, applied in touched.items():
            frame = store.pool.resident(pid)
            if applied or frame is None or frame.dirty:
                continue
            entry = store.pri.lookup(pid)
            if entry.last_lsn != frame.page.page_lsn:
                store.pri.record_write(pid, frame.page.page_lsn)
                compensated.append(pid)
                store.emit("pri_compensated", page=pid,
                           page_lsn=frame.page.page_lsn)

    # --- undo ---
    losers = sorted(att)
    for txn_id in losers:
        txn = Txn(txn_id, TxnKind.USER, last_lsn=att[txn_id])
        store.txns.active[txn_id] = txn
        store.rollback_txn(txn)
        store.txns.finish_abort(txn)
        store.emit("txn_rolled_back", txn=txn_id)
    max_txn = max((rec.txn_id for rec in store.wal.scan(begin_lsn)
                   if rec.txn_id != NIL_TXN), default=0)
    store.txns.next_txn_id = max(store.txns.next_txn_id, max_txn + 1)

    store.restart_mode = False
    store.checkpoint()
    store.emit("restart_complete", pages_read=sorted(pages_redone),
               losers=losers, compensated=sorted(compensated))
    store.last_restart = {"pages_redone": sorted(pages_redone),
                          "losers": losers,
                          "compensated": sorted(compensated)}
    return store.last_restart


def _redo_pri_page(store, pid: int):
    """Re-apply the newest snapshot image of a recovery-index page whose
    durable write may have been lost."""
    entry = None
    for rec in store.wal.scan_backward():
        if rec.type == RecType.PAGE_IMAGE and rec.page_id == pid \
                and rec.payload[0] == 1:
            entry = rec
            break
    if entry is None:
        return
    page = page_from_bytes(entry.payload[1:], expected_id=pid)
    cur = store.page_store.read_page_raw(pid)
    if cur != page.to_bytes(store.config.page_size):
        store.page_store.write_page(page)


# -- media recovery -----------------------------------------------------------


def media_recover(store) -> dict:
    """Rebuild the whole store from the log alone: replay every format,
    image, and update record from the beginning, write every page, then
    run restart for loser rollback and index reconstruction."""
    pages: dict[int, Page] = {}
    meta_body = None
    meta_lsn = NIL_LSN
    meta_count = 0
    for rec in store.wal.scan(FILE_HEADER_SIZE, store.wal.durable_end):
        if rec.type == RecType.PAGE_FORMAT:
            kind, range_hi = decode_page_format(rec.payload)
            for pid in range(rec.page_id, range_hi):
                if pid == 0:
                    meta_body = b"\x00" * store.body_size
                    meta_lsn = rec.lsn
                    meta_count = 0
                    continue
                pages[pid] = store._formatted_page(pid, PageKind(kind),
                                                   rec.lsn)
        elif rec.type == RecType.PAGE_IMAGE:
            page = page_from_bytes(rec.payload[1:],
                                   expected_id=rec.page_id)
            pages[rec.page_id] = page
        elif rec.type in _CONTENT_TYPES and rec.page_id == 0:
            deltas, _, _ = decode_update(rec.payload)
            if meta_body is None:
                raise MediaFailure("meta update precedes its format", 0)
            meta_body = apply_delta(meta_body, deltas)
            meta_lsn = rec.lsn
            meta_count += 1
        elif rec.type in _CONTENT_TYPES and rec.page_id != NIL_PAGE:
            page = pages.get(rec.page_id)
            if page is None or rec.prev_page_lsn != page.page_lsn:
                raise MediaFailure(
                    f"log replay of {rec.page_id} broken at lsn {rec.lsn}",
                    rec.page_id)
            deltas, _, _ = decode_update(rec.payload)
            pages[rec.page_id] = Page(rec.page_id, page.kind, rec.lsn,
                                      page.update_count + 1,
                                      apply_delta(page.body, deltas))
    if meta_body is None:
        raise MediaFailure("log contains no meta page state", 0)
    meta = MetaState.decode_body(meta_body)
    meta.page_size = store.config.page_size
    # write everything back through the rebuilt translation table
    from phoenix.page_store import DATA_FILE
    meta_page = Page(0, PageKind.META, meta_lsn, meta_count, meta_body)
    store.disk.write(DATA_FILE, 0,
                     meta_page.to_bytes(store.config.page_size))
    for pid, page in sorted(pages.items()):
        slot = meta.table.slot_of(pid)
        store.disk.write(DATA_FILE, slot * store.config.page_size,
                         page.to_bytes(store.config.page_size))
    store.emit("media_recovered", pages=len(pages))
    return restart(store)
