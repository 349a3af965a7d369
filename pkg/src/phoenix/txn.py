"""User and system transactions.

User transactions carry logical database changes; commit forces the log.
System transactions make only contents-neutral structural changes (node
splits, PRI maintenance, page relocation bookkeeping) and commit without
forcing, running inline on the invoking thread.  A system transaction lost
at a crash cannot lose logical contents.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from phoenix.errors import UsageError
from phoenix.wal import NIL_LSN, RecType, Wal

# record types a system transaction may legally emit
_SYS_LEGAL = {RecType.UPDATE, RecType.COMPENSATION, RecType.PAGE_FORMAT,
              RecType.PAGE_IMAGE, RecType.PRI_UPDATE, RecType.SYS_COMMIT}


class TxnKind(enum.Enum):
    USER = "user"
    SYSTEM = "system"


class TxnState(enum.Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class Txn:
    txn_id: int
    kind: TxnKind
    last_lsn: int = NIL_LSN
    state: TxnState = TxnState.ACTIVE


class TxnManager:
    def __init__(self, wal: Wal, next_txn_id: int = 1):
        self.wal = wal
        self.next_txn_id = next_txn_id
        self.active: dict[int, Txn] = {}
        self.user_commits = 0

    def begin(self, kind: TxnKind = TxnKind.USER) -> Txn:
        txn = Txn(self.next_txn_id, kind)
        self.next_txn_id += 1
        self.active[txn.txn_id] = txn
        return txn

    def log(self, txn: Txn, rtype: RecType, page_id, prev_page_lsn: int,
            payload: bytes, prev_txn_override: int | None = None) -> int:
        """Append a record on behalf of txn, maintaining its chain."""
        if txn.state is not TxnState.ACTIVE:
            raise UsageError("log on non-active transaction")
        if txn.kind is TxnKind.SYSTEM and rtype not in _SYS_LEGAL:
            raise UsageError(f"system txn may not log {rtype.name}")
        prev = txn.last_lsn if prev_txn_override is None else prev_txn_override
        lsn = self.wal.append(rtype, txn.txn_id, page_id,
                              prev_txn_lsn=prev,
                              prev_page_lsn=prev_page_lsn, payload=payload)
        txn.last_lsn = lsn
        return lsn

    def commit(self, txn: Txn) -> int:
        """User commit forces the log through the commit record; system
        commit only buffers it (contents-neutral changes need no force)."""
        if txn.state is not TxnState.ACTIVE:
            raise UsageError("commit of non-active transaction")
        if txn.kind is TxnKind.USER:
            rtype = RecType.TXN_COMMIT
        else:
            rtype = RecType.SYS_COMMIT
        lsn = self.wal.append(rtype, txn.txn_id, prev_txn_lsn=txn.last_lsn)
        txn.last_lsn = lsn
        txn.state = TxnState.COMMITTED
        del self.active[txn.txn_id]
        if txn.kind is TxnKind.USER:
            self.wal.flush(lsn)
            self.user_commits += 1
        return lsn

    def finish_abort(self, txn: Txn) -> int:
        """Append the abort record once rollback has undone every update.
        The undo walk itself needs page access and lives in the engine."""
        lsn = self.wal.append(RecType.TXN_ABORT, txn.txn_id,
                              prev_txn_lsn=txn.last_lsn)
        txn.last_lsn = lsn
        txn.state = TxnState.ABORTED
        del self.active[txn.txn_id]
        return lsn

    def table_snapshot(self) -> dict[int, int]:
        return {t.txn_id: t.last_lsn for t in self.active.values()}
