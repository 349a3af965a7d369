"""Store lifecycle: durability across close/open, crash semantics, abort
rollback, checkpoint scope, and the offline verifier."""

import pytest

from phoenix.engine import Store
from phoenix.page_store import DATA_FILE
from tests.conftest import make_store, mixed_load


def test_close_open_roundtrip():
    disk, store = make_store()
    kv, heap, hp = mixed_load(store)
    store.close()
    again = Store.open(disk, store.config)
    assert again.scan_all() == sorted(kv.items())
    for (pid, slot), v in heap.items():
        assert again.heap_get(pid, slot) == v
    assert again.verify_store() == []


def test_crash_loses_nothing_committed():
    disk, store = make_store()
    kv, heap, hp = mixed_load(store)
    t = store.begin()
    store.put(t, b"committed-late", b"yes")
    store.commit(t)
    kv[b"committed-late"] = b"yes"
    # crash: reopen from the durable state without closing
    survivor = Store.open(disk.clone(), store.config)
    assert survivor.scan_all() == sorted(kv.items())
    for (pid, slot), v in heap.items():
        assert survivor.heap_get(pid, slot) == v


def test_crash_rolls_back_uncommitted():
    disk, store = make_store()
    kv, heap, hp = mixed_load(store)
    t = store.begin()
    store.put(t, b"zzz-loser", b"gone")
    store.heap_put(t, hp, 0, b"overwritten")
    store.checkpoint()            # force loser updates to disk
    survivor = Store.open(disk.clone(), store.config)
    assert survivor.last_restart["losers"] == [t.txn_id]
    assert survivor.get(b"zzz-loser") is None
    assert survivor.heap_get(hp, 0) == heap[(hp, 0)]


def test_abort_restores_tree_and_heap():
    _, store = make_store()
    kv, heap, hp = mixed_load(store)
    t = store.begin()
    store.put(t, b"k00001", b"mutated")
    store.delete(t, b"k00002")
    store.heap_put(t, hp, 1, b"mutated")
    store.abort(t)
    assert store.get(b"k00001") == kv[b"k00001"]
    assert store.get(b"k00002") == kv[b"k00002"]
    assert store.heap_get(hp, 1) == heap[(hp, 1)]


def test_checkpoint_cleans_exactly_dirty_at_begin():
    _, store = make_store(pool_frames=64)
    mixed_load(store)
    dirty_before = set(store.pool.dirty_pids())
    assert dirty_before
    result = store.checkpoint()
    assert set(result["frames_cleaned"]) == dirty_before
    assert store.pool.dirty_pids() == []
    # nothing dirty: second checkpoint cleans nothing
    assert store.checkpoint()["frames_cleaned"] == []


def test_small_pool_forces_evictions_without_loss():
    _, store = make_store(pool_frames=4, pages=24, page_size=1024)
    kv, heap, hp = mixed_load(store, keys=300)
    assert store.pool.evictions > 0
    assert store.scan_all() == sorted(kv.items())
    assert store.verify_store() == []


def test_verify_store_reports_poked_corruption():
    disk, store = make_store()
    mixed_load(store)
    store.checkpoint()
    store.pool.drop_all()
    pid = store.meta.root_pid
    slot = store.page_store.table.slot_of(pid)
    disk.poke(DATA_FILE, slot * store.config.page_size + 40, b"\xde\xad")
    report = store.verify_store()
    assert any(f"page {pid}" in line for line in report)


def test_counters_track_commits_and_recoveries():
    _, store = make_store()
    mixed_load(store)
    c = store.counters()
    assert c["user_commits"] == 2
    assert c["recoveries"] == 0
    assert c["pri_entries"] >= 1
