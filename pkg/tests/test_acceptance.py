"""Acceptance gate: twelve end-to-end criteria, one pass/fail line each.

Every check compares engine behavior against an independent oracle:
durable byte images captured before injection, a shadow key-value map,
a re-derived redo read set computed from the raw log, or direct counter
arithmetic.  Run with ``pytest -v -s tests/test_acceptance.py``.
"""

import json
import random
import time

import pytest

from phoenix.bench import build_store, run_bench
from phoenix.disk import Disk
from phoenix.engine import Store, StoreConfig
from phoenix.faultctl import crash_sweep, run_scenario_text
from phoenix.foster_btree import decode_node, encode_node
from phoenix.page_store import DATA_FILE, FaultRule
from phoenix.pages import Page, PageKind, page_from_bytes
from phoenix.recovery import _find_last_checkpoint, _load_meta
from phoenix.wal import (NIL_PAGE, NIL_TXN, RecType, decode_pri_update,
                         decode_update)

MODES = ["bitflip", "torn", "stale", "unreadable"]


def _result(num: int, desc: str, ok: bool, detail: str = ""):
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'}: {desc}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


# -- criteria 1-3 share one fault storm --------------------------------------------------


def _fault_storm(seed: int, faults: int = 100) -> dict:
    cfg = StoreConfig(pool_frames=64, backup_interval=100)
    disk, store = build_store(10_000, cfg, keys=1500, seed=seed)
    rng = random.Random(seed)
    stats = {"faults": 0, "recoveries": 0, "mismatches": 0,
             "bad_io": [], "exceptions": 0, "aborts": 0}
    hi = store.meta.next_page_id + 60   # include never-allocated pages
    for i in range(faults):
        pid = rng.randrange(1, hi)
        mode = MODES[i % 4]
        frame = store.pool.resident(pid)
        if frame is not None:
            if frame.dirty:
                store._clean_frame(frame)
            store.pool.drop(pid)
        oracle = store.page_store.read_page_raw(pid)
        count = store.injector.read_counts.get(pid, 0)
        store.injector.plan.rules.append(
            FaultRule(pid, pid + 1, count + 1, mode))
        stats["faults"] += 1
        n_rec = store.recoveries
        txn = store.begin()              # an accessor mid-transaction
        try:
            frame = store.pool.fix(pid)
            store.pool.unfix(frame)
        except Exception:                # noqa: BLE001
            stats["exceptions"] += 1
            continue
        store.commit(txn)
        if store.recoveries > n_rec:
            stats["recoveries"] += 1
            if store.page_store.read_page_raw(pid) != oracle:
                stats["mismatches"] += 1
        if frame.page.to_bytes(cfg.page_size) != oracle:
            stats["mismatches"] += 1
    stats["aborts"] = sum(1 for r in store.wal.scan()
                          if r.type == RecType.TXN_ABORT)
    for e in store.events:
        if e["event"] == "page_recovered":
            if e["backup_reads"] != 1 \
                    or e["log_reads"] > cfg.backup_interval:
                stats["bad_io"].append(e)
    return stats


@pytest.fixture(scope="module")
def storm():
    t0 = time.perf_counter()
    per_seed = [_fault_storm(seed) for seed in range(10)]
    return per_seed, time.perf_counter() - t0


def test_criterion_01_recovery_exactness(storm):
    per_seed, elapsed = storm
    faults = sum(s["faults"] for s in per_seed)
    mismatches = sum(s["mismatches"] for s in per_seed)
    recoveries = sum(s["recoveries"] for s in per_seed)
    _result(1, "single-page recovery bit-identical to durable oracle",
            faults >= 1000 and mismatches == 0 and elapsed < 120,
            f"{faults} faults, {recoveries} recoveries, "
            f"{mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_02_transaction_transparency(storm):
    per_seed, _ = storm
    exceptions = sum(s["exceptions"] for s in per_seed)
    aborts = sum(s["aborts"] for s in per_seed)
    _result(2, "no transaction aborted or failed by a page fault",
            exceptions == 0 and aborts == 0,
            f"{exceptions} surfaced errors, {aborts} abort records")


def test_criterion_03_io_bound(storm):
    per_seed, _ = storm
    violations = sum(len(s["bad_io"]) for s in per_seed)
    _result(3, "every recovery: exactly 1 backup read, <=100 log reads",
            violations == 0, f"{violations} violations")


def test_criterion_04_latency_separation():
    doc = run_bench(pages=10_000, keys=1500, recoveries=30,
                    config=StoreConfig(pool_frames=64, io_delay_us=100))
    ratio = doc["media_over_single"]
    _result(4, "median single-page recovery <= 1/50 of media recovery",
            ratio >= 50,
            f"media/single ratio {ratio:.0f}, "
            f"median {doc['single_page']['median_s'] * 1e3:.2f}ms, "
            f"media {doc['media_recover_s']:.2f}s")


SWEEP_SCENARIO = """
seed 17
init 64
bulk 120 k
random-ops 180
checkpoint
random-ops 120
checkpoint
random-ops 80
"""


def test_criterion_05_crash_point_sweep():
    t0 = time.perf_counter()
    res = crash_sweep(SWEEP_SCENARIO,
                      StoreConfig(pool_frames=16, backup_interval=8))
    elapsed = time.perf_counter() - t0
    _result(5, "restart state equals committed oracle at every boundary",
            res["points"] >= 400 and not res["divergences"]
            and elapsed < 300,
            f"{res['points']} crash points, "
            f"{len(res['divergences'])} divergences, {elapsed:.1f}s")


def _expected_redo_reads(disk: Disk, cfg: StoreConfig) -> set[int]:
    """Re-derive, from the crashed disk's raw log alone, which pages a
    restart must read: pages with a logged content change after the last
    checkpoint and no covering index write record."""
    probe = Store(disk, cfg)            # no restart: just the raw files
    _load_meta(probe)
    begin_lsn, _, _ = _find_last_checkpoint(probe)
    req: dict[int, int] = {}
    for rec in probe.wal.scan(begin_lsn):
        if rec.type in (RecType.UPDATE, RecType.COMPENSATION):
            if rec.page_id == 0:
                deltas, _, _ = decode_update(rec.payload)
                probe.apply_meta_record(rec.lsn, deltas)
            elif rec.page_id != NIL_PAGE:
                req.setdefault(rec.page_id, rec.lsn)
        elif rec.type == RecType.PAGE_FORMAT:
            req[rec.page_id] = rec.lsn
        elif rec.type == RecType.PAGE_IMAGE and rec.payload[0] == 1:
            req[rec.page_id] = rec.lsn
        elif rec.type == RecType.PRI_UPDATE:
            pid, page_lsn, _, is_write, _ = decode_pri_update(rec.payload)
            if is_write and pid in req and req[pid] <= page_lsn:
                del req[pid]
    pri_pids = set(probe.meta.pri_pages[0]) | set(probe.meta.pri_pages[1])
    return {pid for pid in req if pid not in pri_pids and pid != 0}


def test_criterion_06_redo_skip():
    cfg = StoreConfig(pool_frames=16, backup_interval=8)
    sc = SWEEP_SCENARIO.replace("seed 17", "seed 23")
    from phoenix.faultctl import Scenario, ScenarioRunner
    runner = ScenarioRunner(Scenario.parse(sc), cfg, disk=Disk())
    boundaries: list[int] = []
    runner.disk.write_hooks.append(
        lambda name, off, data: boundaries.append(
            len(runner.disk.journal)))
    runner._ensure_store()
    first = len(runner.disk.journal)
    assert runner.run()["divergences"] == []
    points = sorted(b for b in set(boundaries) if b >= first)
    points = random.Random(0).sample(points, 100)
    wrong_reads = 0
    state_diffs = 0
    for k in points:
        skip_store = Store.open(runner.disk.fork_at(k), cfg)
        plain = Store.open(
            runner.disk.fork_at(k),
            StoreConfig(pool_frames=16, backup_interval=8,
                        redo_skip=False))
        expected = _expected_redo_reads(runner.disk.fork_at(k), cfg)
        got = set(skip_store.last_restart["pages_redone"])
        if got != expected:
            wrong_reads += 1
        if skip_store.scan_all() != plain.scan_all():
            state_diffs += 1
    _result(6, "redo-skip reads exactly the lagging pages, same state",
            wrong_reads == 0 and state_diffs == 0,
            f"100 crash points, {wrong_reads} wrong read sets, "
            f"{state_diffs} state diffs")


def test_criterion_07_index_repair():
    cfg = StoreConfig(pool_frames=8, backup_interval=100)
    disk = Disk()
    store = Store.create(disk, cfg, 32)
    hp = store.heap_alloc()
    t = store.begin()
    store.heap_put(t, hp, 0, b"old")
    store.commit(t)
    store.checkpoint()          # the page and its index entry are durable
    t = store.begin()
    store.heap_put(t, hp, 0, b"payload")
    store.commit(t)
    frame = store.pool.resident(hp)
    store._clean_frame(frame)   # durable write done, index record buffered
    crashed = Store.open(disk.clone(), cfg)   # crash loses the log tail
    compensated = hp in crashed.last_restart["compensated"]
    # a later fault on that page must still recover exactly
    oracle = crashed.page_store.read_page_raw(hp)
    crashed.pool.drop_all()
    count = crashed.injector.read_counts.get(hp, 0)
    crashed.injector.plan.rules.append(
        FaultRule(hp, hp + 1, count + 1, "bitflip"))
    value = crashed.heap_get(hp, 0)
    exact = crashed.page_store.read_page_raw(hp) == oracle \
        and value == b"payload" and crashed.recoveries == 1
    _result(7, "restart logs the missing index record; recovery exact",
            compensated and exact,
            f"compensated={compensated}, recovered value={value!r}")


def test_criterion_08_index_footprint():
    cfg = StoreConfig(pool_frames=64, backup_interval=100)
    _, store = build_store(10_000, cfg, keys=2000, seed=0)
    pages = store.pri.cover_hi()
    raw = store.pri.serialize()
    per_page = len(raw) / pages
    ratio = len(store.pri.entries) / pages
    _result(8, "index <=16 bytes/page and entries <5% of pages",
            per_page <= 16 and ratio < 0.05,
            f"{per_page:.2f} bytes/page, {len(store.pri.entries)} entries "
            f"for {pages} pages ({ratio:.2%})")


def test_criterion_09_detection_completeness():
    cfg = StoreConfig(pool_frames=256, backup_interval=500,
                      page_size=1024)
    disk = Disk()
    store = Store.create(disk, cfg, 16)
    t = store.begin()
    for i in range(3000):
        store.put(t, f"key{i:06d}".encode(), b"v" * 12)
        if i % 500 == 499:
            store.commit(t)
            t = store.begin()
    store.commit(t)
    store.close()
    root = store.btree._read_node(store.meta.root_pid)
    tree_pids = [pid for pid in range(1, store.meta.next_page_id)
                 if store.page_store.read_page(pid).kind
                 in (PageKind.BTREE_LEAF, PageKind.BTREE_BRANCH)]
    assert root.level >= 2 and len(tree_pids) >= 50, \
        f"need a 3-level, 50-node tree; got level {root.level}, " \
        f"{len(tree_pids)} nodes"
    semantic_total = semantic_missed = 0
    for pid in tree_pids:
        slot = store.page_store.table.slot_of(pid)
        off = slot * cfg.page_size
        original = disk.read_quiet(DATA_FILE, off, cfg.page_size)
        page = page_from_bytes(original, expected_id=pid)
        node = decode_node(page.body)
        boundary_keys = [node.low, node.high] + list(node.seps)
        if node.foster_pid:
            boundary_keys.append(node.foster_sep)
        for ki in range(len(boundary_keys)):
            width = 1 + len(boundary_keys[ki][1])  # flag byte + key bytes
            for byte in range(width):
                keys = [[k[0], bytearray(k[1])] for k in boundary_keys]
                if byte == 0:
                    keys[ki][0] ^= 1
                else:
                    keys[ki][1][byte - 1] ^= 0x20
                newkeys = [(f, bytes(b)) for f, b in keys]
                clone = decode_node(page.body)
                clone.low = newkeys[0]
                clone.high = newkeys[1]
                clone.seps = list(newkeys[2:2 + len(node.seps)])
                if node.foster_pid:
                    clone.foster_sep = newkeys[-1]
                try:
                    body = encode_node(clone)
                except Exception:       # noqa: BLE001 - unencodable = detected
                    continue
                body += b"\x00" * (len(page.body) - len(body))
                evil = Page(pid, page.kind, page.page_lsn,
                            page.update_count, body)
                disk.poke(DATA_FILE, off, evil.to_bytes(cfg.page_size))
                store.pool.drop_all()
                semantic_total += 1
                problems = store.btree.verify_tree()
                if not problems:
                    semantic_missed += 1
                disk.poke(DATA_FILE, off, original)
    store.pool.drop_all()
    checksum_total = checksum_missed = 0
    rng = random.Random(1)
    for pid in tree_pids:
        slot = store.page_store.table.slot_of(pid)
        off = slot * cfg.page_size
        original = disk.read_quiet(DATA_FILE, off, cfg.page_size)
        for _ in range(8):              # sampled raw byte flips
            pos = rng.randrange(cfg.page_size)
            disk.poke(DATA_FILE, off + pos,
                      bytes([original[pos] ^ 0x01]))
            checksum_total += 1
            try:
                page_from_bytes(
                    disk.read_quiet(DATA_FILE, off, cfg.page_size),
                    expected_id=pid)
                checksum_missed += 1
            except Exception:           # noqa: BLE001
                pass
            disk.poke(DATA_FILE, off, original)
    _result(9, "every fence/separator mutation detected; checksums hold",
            semantic_missed == 0 and checksum_missed == 0,
            f"{semantic_total} semantic mutations over {len(tree_pids)} "
            f"nodes (level {root.level}), {semantic_missed} missed; "
            f"{checksum_total} byte flips, {checksum_missed} missed")


def test_criterion_10_no_forced_flushes_for_system_work():
    cfg = StoreConfig(pool_frames=8, backup_interval=10, page_size=1024)
    disk = Disk()
    store = Store.create(disk, cfg, 16)
    for batch in range(20):
        t = store.begin()
        for i in range(30):             # forces splits and page cleanings
            store.put(t, f"k{batch:02d}{i:04d}".encode(), b"v" * 16)
        store.commit(t)
        if batch % 7 == 6:
            store.checkpoint()
    c = store.counters()
    ok = c["forced_log_flushes"] == c["user_commits"] + c["checkpoints"]
    _result(10, "forced log flushes == user commits + checkpoints",
            ok and store.pool.evictions > 0,
            f"forced={c['forced_log_flushes']}, commits={c['user_commits']}, "
            f"checkpoints={c['checkpoints']}, "
            f"evictions={store.pool.evictions}")


def test_criterion_11_checkpoint_scope():
    cfg = StoreConfig(pool_frames=64, backup_interval=100)
    disk = Disk()
    store = Store.create(disk, cfg, 64)
    late_pid = store.heap_alloc()
    store.checkpoint()                  # start from an all-clean pool
    t = store.begin()
    for i in range(200):
        store.put(t, f"k{i:05d}".encode(), b"v" * 30)
    store.commit(t)
    original_write_meta = store.write_meta

    def write_meta_and_dirty_late():
        # a page dirtied while the checkpoint is in flight
        txn = store.begin()
        store.heap_put(txn, late_pid, 0, b"late")
        store.commit(txn)
        original_write_meta()

    store.write_meta = write_meta_and_dirty_late
    dirty_at_begin = set(store.pool.dirty_pids())
    result = store.checkpoint()
    store.write_meta = original_write_meta
    cleaned = set(result["frames_cleaned"])
    late_frame = store.pool.resident(late_pid)
    ok = cleaned == dirty_at_begin and late_frame is not None \
        and late_frame.dirty and late_pid not in cleaned
    _result(11, "checkpoint writes exactly the frames dirty at begin",
            ok, f"cleaned {len(cleaned)} frames; late page "
                f"{'still dirty' if late_frame and late_frame.dirty else 'WRITTEN'}")


def test_criterion_12_determinism():
    text = SWEEP_SCENARIO.replace("random-ops 80\n",
                                  "fault 2..8 2 bitflip\nevict\n"
                                  "random-ops 80\ncrash\nrandom-ops 40\n"
                                  "verify\n")
    cfg = StoreConfig(pool_frames=16, backup_interval=8)

    def stream():
        rep = run_scenario_text(text, cfg)
        assert rep["divergences"] == []
        return "\n".join(json.dumps(e, sort_keys=True)
                         for e in rep["store_events"] + rep["runner_events"])

    a, b = stream(), stream()
    _result(12, "identical scenario replays produce identical event bytes",
            a == b, f"{len(a)} bytes compared")
