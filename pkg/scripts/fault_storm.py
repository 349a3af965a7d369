#!/usr/bin/env python3
"""Inject many randomized single-page faults and verify every recovery is
bit-identical to the pre-fault durable image.

    python3 scripts/fault_storm.py --pages 10000 --faults 100 --seed 0
"""
import argparse
import json
import random

from phoenix.bench import build_store
from phoenix.engine import StoreConfig
from phoenix.page_store import FAULT_MODES, FaultRule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pages", type=int, default=10_000)
    ap.add_argument("--keys", type=int, default=5_000)
    ap.add_argument("--faults", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    _, store = build_store(args.pages, StoreConfig(pool_frames=32),
                           args.keys, args.seed)
    store.injector.plan.seed = args.seed
    divergences = 0
    for n in range(args.faults):
        pid = rng.randrange(1, store.meta.next_page_id)
        mode = FAULT_MODES[n % len(FAULT_MODES)]
        frame = store.pool.resident(pid)
        if frame is not None:
            if frame.dirty:
                store._clean_frame(frame)
            store.pool.drop(pid)
        oracle = store.page_store.read_page_raw(pid)
        count = store.injector.read_counts.get(pid, 0)
        store.injector.plan.rules.append(
            FaultRule(pid, pid + 1, count + 1, mode))
        frame = store.pool.fix(pid)
        store.pool.unfix(frame)
        if store.page_store.read_page_raw(pid) != oracle:
            divergences += 1
    print(json.dumps({"faults": args.faults, "divergences": divergences,
                      "recoveries": store.recoveries}, sort_keys=True))


if __name__ == "__main__":
    main()
