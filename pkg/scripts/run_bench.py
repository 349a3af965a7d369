#!/usr/bin/env python3
"""Recovery latency benchmark: single-page recovery vs restart vs media
recovery, with a synthetic per-I/O delay.

    python3 scripts/run_bench.py --pages 10000 --keys 20000 --io-delay-us 100
"""
import argparse
import json

from phoenix.bench import run_bench
from phoenix.engine import StoreConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pages", type=int, default=10_000)
    ap.add_argument("--keys", type=int, default=20_000)
    ap.add_argument("--recoveries", type=int, default=50)
    ap.add_argument("--io-delay-us", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    result = run_bench(pages=args.pages, keys=args.keys,
                       recoveries=args.recoveries, seed=args.seed,
                       config=StoreConfig(io_delay_us=args.io_delay_us))
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
