"""Benchmark harness: single-page recovery latency distribution versus
full restart and media recovery on the same store.

All timing uses monotonic clocks; the disk's synthetic per-I/O delay
(``--io-delay-us``) emulates device latency so the single-page / media
ratio reflects I/O counts rather than Python overhead.
"""

from __future__ import annotations

import statistics
import time

from phoenix.disk import Disk
from phoenix.engine import Store, StoreConfig
from phoenix.page_store import FaultRule
from phoenix.recovery import media_recover


def _percentile(values: list[float], q: float) -> float:
    data = sorted(values)
    idx = min(len(data) - 1, int(q * len(data)))
    return data[idx]


def build_store(pages: int, config: StoreConfig, keys: int,
                seed: int = 0) -> tuple[Disk, Store]:
    """A loaded store: sequential bulk load plus heap traffic, then a
    checkpoint so everything is durable."""
    disk = Disk(config.io_delay_us)
    store = Store.create(disk, config, initial_pages=pages)
    txn = store.begin()
    for i in range(keys):
        store.put(txn, b"bench%08d" % i, b"value-%08d" % i)
        if (i + 1) % 500 == 0:
            store.commit(txn)
            txn = store.begin()
    store.commit(txn)
    hp = store.heap_alloc()
    txn = store.begin()
    for slot in range(16):
        store.heap_put(txn, hp, slot, b"heap-%d" % slot)
    store.commit(txn)
    store.checkpoint()
    return disk, store

def time_single_page_recoveries(store: Store, targets: list[int],
                                mode: str = "bitflip") -> list[dict]:
    """Fault each target page on its next read and time the transparent
    recovery triggered by a buffer fault."""
    samples = []
    for pid in targets:
        frame = store.pool.resident(pid)
        if frame is not None:
            if frame.dirty:
                store._clean_frame(frame)
            store.pool.drop(pid)
        count = store.injector.read_counts.get(pid, 0)
        store.injector.plan.rules.append(
            FaultRule(pid, pid + 1, count + 1, mode))
        before = dict(store.counters())
        t0 = time.perf_counter()
        frame = store.pool.fix(pid)
        elapsed = time.perf_counter() - t0
        store.pool.unfix(frame)
        after = store.counters()
        samples.append({
            "page": pid,
            "seconds": elapsed,
            "backup_reads": after["backup_reads"] - before["backup_reads"],
            "log_reads": (after["log_record_reads"]
                          - before["log_record_reads"]),
        })
    return samples


def time_restart(disk: Disk, config: StoreConfig) -> float:
    d = disk.clone()
    t0 = time.perf_counter()
    Store.open(d, config)
    return time.perf_counter() - t0


def time_media_recover(disk: Disk, config: StoreConfig) -> float:
    d = disk.clone()
    store = Store(d, config)
    t0 = time.perf_counter()
    media_recover(store)
    return time.perf_counter() - t0


def run_bench(pages: int = 10_000, keys: int = 20_000,
              recoveries: int = 50, seed: int = 0,
              config: StoreConfig | None = None) -> dict:
    config = config or StoreConfig(io_delay_us=100)
    disk, store = build_store(pages, config, keys, seed)
    import random
    rng = random.Random(seed)
    data_pages = [pid for pid in range(1, store.meta.next_page_id)]
    targets = rng.sample(data_pages, min(recoveries, len(data_pages)))
    samples = time_single_page_recoveries(store, targets)
    store.checkpoint()
    restart_s = time_restart(disk, config)
    media_s = time_media_recover(disk, config)
    lat = [s["seconds"] for s in samples]
    median = statistics.median(lat)
    return {
        "pages": pages,
        "keys": keys,
        "io_delay_us": config.io_delay_us,
        "single_page": {
            "count": len(samples),
            "median_s": median,
            "p99_s": _percentile(lat, 0.99),
            "mean_backup_reads": statistics.mean(
                s["backup_reads"] for s in samples),
            "max_log_reads": max(s["log_reads"] for s in samples),
        },
        "restart_s": restart_s,
        "media_recover_s": media_s,
        "media_over_single": media_s / median if median else float("inf"),
    }
