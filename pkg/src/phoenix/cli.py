"""Command-line interface.

    phoenix init   <dir> --pages N            create a store
    phoenix run    <dir> --scenario FILE      run a workload scenario
    phoenix bench  --pages N --keys N ...     recovery latency benchmark
    phoenix verify <dir>                      offline integrity sweep
    phoenix inject <dir> --scenario FILE      arm faults, then run

The store lives in a directory of flat files (data.db, wal.log,
backup.db).  Reports are JSON; ``--report PATH`` writes the event stream
as JSON lines (see docs/events.md for the schema).
"""

from __future__ import annotations

import argparse
import json
import sys

from phoenix.disk import Disk
from phoenix.engine import Store, StoreConfig
from phoenix.faultctl import Scenario, ScenarioRunner


def _config(args) -> StoreConfig:
    cfg = StoreConfig()
    if getattr(args, "pool_frames", None):
        cfg.pool_frames = args.pool_frames
    if getattr(args, "backup_interval", None):
        cfg.backup_interval = args.backup_interval
    if getattr(args, "io_delay_us", None):
        cfg.io_delay_us = args.io_delay_us
    return cfg


def _write_report(path: str | None, events: list[dict]):
    if not path:
        return
    with open(path, "w") as fh:
        for doc in events:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def _load_scenario(args) -> Scenario:
    with open(args.scenario) as fh:
        sc = Scenario.parse(fh.read())
    if args.seed is not None:
        sc.seed = args.seed
        sc.fault_plan.seed = args.seed
    return sc


def cmd_init(args) -> int:
    disk = Disk()
    store = Store.create(disk, _config(args), initial_pages=args.pages)
    store.close()
    disk.save_dir(args.dir)
    print(f"initialized {args.pages} pages in {args.dir}")
    return 0


def _run_common(args, checkpoint_every: int | None) -> int:
    cfg = _config(args)
    sc = _load_scenario(args)
    if checkpoint_every:
        steps = []
        since = 0
        for step in sc.steps:
            steps.append(step)
            since += 1
            if since >= checkpoint_every:
                steps.append(("checkpoint",))
                since = 0
        sc.steps = steps
    disk = Disk.load_dir(args.dir, cfg.io_delay_us) if args.dir else None
    runner = ScenarioRunner(sc, cfg, disk=disk)
    report = runner.run()
    if args.dir:
        runner.disk.save_dir(args.dir)
    _write_report(args.report, report["store_events"]
                  + report["runner_events"])
    summary = {k: report[k] for k in ("seed", "divergences", "counters")}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 1 if report["divergences"] else 0


def cmd_run(args) -> int:
    return _run_common(args, args.checkpoint_every)


def cmd_inject(args) -> int:
    # same machinery as run; the scenario's fault lines arm the injector
    return _run_common(args, args.checkpoint_every)


def cmd_bench(args) -> int:
    from phoenix.bench import run_bench
    cfg = _config(args)
    if not args.io_delay_us:
        cfg.io_delay_us = 100
    result = run_bench(pages=args.pages, keys=args.keys,
                       recoveries=args.recoveries, seed=args.seed or 0,
                       config=cfg)
    _write_report(args.report, [result])
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    disk = Disk.load_dir(args.dir, cfg.io_delay_us)
    store = Store.open(disk, cfg)
    report = store.verify_store()
    print(json.dumps({"problems": report}, indent=2, sort_keys=True))
    _write_report(args.report, store.events)
    return 1 if report else 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pool-frames", type=int, default=None)
    p.add_argument("--backup-interval", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="insert a checkpoint every N scenario steps")
    p.add_argument("--io-delay-us", type=int, default=None)
    p.add_argument("--report", default=None,
                   help="write the JSON-lines event stream here")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="phoenix",
        description="transactional page store with single-page recovery")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a store directory")
    p.add_argument("dir")
    p.add_argument("--pages", type=int, default=1024)
    _add_common(p)
    p.set_defaults(fn=cmd_init)

    for name, fn in (("run", cmd_run), ("inject", cmd_inject)):
        p = sub.add_parser(name, help=f"{name} a scenario")
        p.add_argument("dir", nargs="?", default=None,
                       help="store directory (omit for a fresh store)")
        p.add_argument("--scenario", required=True)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("bench", help="recovery latency benchmark")
    p.add_argument("--pages", type=int, default=10_000)
    p.add_argument("--keys", type=int, default=20_000)
    p.add_argument("--recoveries", type=int, default=50)
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("verify", help="offline integrity sweep")
    p.add_argument("dir")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
