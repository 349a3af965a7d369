#!/usr/bin/env python3
"""Crash the store at every durability boundary of a scenario and check
that restart reproduces exactly the committed state.

    python3 scripts/crash_sweep.py --ops 200 --seed 3
"""
import argparse
import json

from phoenix.engine import StoreConfig
from phoenix.faultctl import crash_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ops", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pool-frames", type=int, default=12)
    ap.add_argument("--sample", type=int, default=None,
                    help="check only this many randomly chosen boundaries")
    args = ap.parse_args()
    text = (f"seed {args.seed}\ninit 64\nbulk 50 base\n"
            f"random-ops {args.ops}\ncheckpoint\nrandom-ops {args.ops}\n")
    res = crash_sweep(text, StoreConfig(pool_frames=args.pool_frames,
                                        backup_interval=20),
                      sample=args.sample, sample_seed=args.seed)
    print(json.dumps({"points": res["points"],
                      "divergences": res["divergences"]},
                     indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
