"""Recovery paths: page rebuild exactness, all four corruption modes,
restart idempotence, media recovery, and recovery-index page loss."""

import pytest

from phoenix.engine import Store
from phoenix.page_store import DATA_FILE, FaultRule
from phoenix.recovery import media_recover, rebuild_page
from phoenix.recovery_index import NIL
from tests.conftest import make_store, mixed_load

MODES = ["bitflip", "torn", "stale", "unreadable"]


def loaded_store(**kw):
    disk, store = make_store(pages=24, **kw)
    kv, heap, hp = mixed_load(store, keys=120, heap_vals=12)
    store.checkpoint()
    return disk, store, kv, heap


def durable_image(store, pid):
    return store.page_store.read_page_raw(pid)


def test_rebuild_matches_durable_image_for_every_page():
    disk, store, kv, heap = loaded_store()
    store.pool.drop_all()
    for pid in range(store.meta.next_page_id):
        if pid == 0 or pid in store.meta.pri_pages[0] \
                or pid in store.meta.pri_pages[1]:
            continue
        page, backup_reads, log_reads = rebuild_page(store, pid)
        assert page.to_bytes(store.config.page_size) \
            == durable_image(store, pid), f"page {pid}"
        assert backup_reads <= 1
        assert log_reads <= store.config.backup_interval


@pytest.mark.parametrize("mode", MODES)
def test_each_mode_recovers_bit_exactly(mode):
    disk, store, kv, heap = loaded_store()
    # give the target page two durable versions that differ in the second
    # half, so torn and stale injections produce genuinely wrong bytes
    pid = next(p for (p, s) in heap)
    t = store.begin()
    store.heap_put(t, pid, 40, b"tail-half-change")
    store.commit(t)
    store.checkpoint()
    store.pool.drop_all()
    before = durable_image(store, pid)
    count = store.injector.read_counts.get(pid, 0)
    store.injector.plan.rules.append(FaultRule(pid, pid + 1, count + 1, mode))
    frame = store.pool.fix(pid)
    store.pool.unfix(frame)
    assert store.injector.events[-1][2] == mode
    causes = [e["cause"] for e in store.events
              if e["event"] == "failure_detected"]
    assert len(causes) == 1
    recovered = {e["page"]: e for e in store.events
                 if e["event"] == "page_recovered"}
    assert pid in recovered
    # the recovered durable image carries the same logical content; a
    # relocation rewrites the slot, so compare decoded body and lsn
    after = durable_image(store, pid)
    assert after == before
    assert store.scan_all() == sorted(kv.items())
    assert store.verify_store() == []


def test_stale_detected_without_update_since_backup():
    # a page backed up and untouched since: last_lsn is nil, yet the exact
    # PageLSN recorded from the image still catches a stale read
    disk, store = make_store(pages=24, backup_interval=1)
    kv, heap, hp = mixed_load(store, keys=40, heap_vals=4)
    for v in (b"v1", b"v2", b"v3"):
        t = store.begin()
        store.heap_put(t, hp, 0, v)
        store.commit(t)
        store.checkpoint()
    entry = store.pri.lookup(hp)
    assert entry.last_lsn == NIL and entry.backup_lsn != NIL
    store.pool.drop_all()
    count = store.injector.read_counts.get(hp, 0)
    store.injector.plan.rules.append(FaultRule(hp, hp + 1, count + 1,
                                               "stale"))
    assert store.heap_get(hp, 0) == b"v3"
    assert any(e["event"] == "page_recovered" and e["page"] == hp
               for e in store.events)


def test_unreadable_page_is_relocated_off_the_bad_block():
    disk, store, kv, heap = loaded_store()
    pid = store.meta.root_pid
    old_slot = store.page_store.table.slot_of(pid)
    store.pool.drop_all()
    count = store.injector.read_counts.get(pid, 0)
    store.injector.plan.rules.append(
        FaultRule(pid, pid + 1, count + 1, "unreadable"))
    store.get(b"k00000")
    assert store.page_store.table.slot_of(pid) != old_slot
    assert old_slot in store.page_store.table.bad_blocks
    # the relocation is durable once a checkpoint writes the meta page
    store.checkpoint()
    survivor = Store.open(disk.clone(), store.config)
    assert survivor.page_store.table.slot_of(pid) != old_slot
    assert survivor.scan_all() == sorted(kv.items())


def test_restart_is_idempotent():
    disk, store, kv, heap = loaded_store()
    t = store.begin()
    store.put(t, b"after-ckpt", b"x")
    store.commit(t)
    kv[b"after-ckpt"] = b"x"
    once = Store.open(disk.clone(), store.config)
    twice = Store.open(once.disk.clone(), store.config)
    assert once.scan_all() == twice.scan_all() == sorted(kv.items())
    assert twice.last_restart["pages_redone"] == []
    assert twice.last_restart["losers"] == []


def test_media_recover_rebuilds_everything():
    disk, store, kv, heap = loaded_store()
    t = store.begin()
    store.put(t, b"post-ckpt", b"y")
    store.commit(t)
    kv[b"post-ckpt"] = b"y"
    crashed = disk.clone()
    # trash the entire data file, keep log + backups
    size = crashed.size(DATA_FILE)
    crashed.poke(DATA_FILE, 0, b"\x00" * size)
    fresh = Store(crashed, store.config)
    media_recover(fresh)
    assert fresh.scan_all() == sorted(kv.items())
    for (pid, slot), v in heap.items():
        assert fresh.heap_get(pid, slot) == v
    assert fresh.verify_store() == []


def test_lost_recovery_index_page_is_rebuilt_at_open():
    disk, store, kv, heap = loaded_store()
    pri_pids = store.meta.pri_pages[0] + store.meta.pri_pages[1]
    assert pri_pids
    crashed = disk.clone()
    slot = store.page_store.table.slot_of(pri_pids[0])
    crashed.poke(DATA_FILE, slot * store.config.page_size, b"\xff" * 64)
    survivor = Store.open(crashed, store.config)
    assert survivor.scan_all() == sorted(kv.items())
    assert survivor.verify_store() == []


def test_recovery_event_reports_io_budget():
    disk, store, kv, heap = loaded_store()
    pid = store.meta.root_pid
    store.pool.drop_all()
    count = store.injector.read_counts.get(pid, 0)
    store.injector.plan.rules.append(
        FaultRule(pid, pid + 1, count + 1, "bitflip"))
    store.get(b"k00000")
    ev = [e for e in store.events if e["event"] == "page_recovered"][-1]
    assert ev["backup_reads"] == 1
    assert 0 <= ev["log_reads"] <= store.config.backup_interval
