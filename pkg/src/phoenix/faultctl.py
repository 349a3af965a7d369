"""Scenario runner, shadow oracle, and crash orchestration.

A scenario is a line-oriented text file mixing workload directives with
the fault-plan grammar (``seed``/``fault`` lines, shared with the page
store).  Directives:

    seed <u64>                     RNG seed (also the fault-plan seed)
    init <pages>                   create the store with this many pages
    fault <pid|lo..hi> <n> <mode>  inject on the nth read of a page
    begin <t> / commit <t> / abort <t>
    put <key> <value>              upsert (autocommits if no txn is open)
    insert <key> <value>           strict insert
    del <key>
    get <key>                      result recorded as an event
    heap-alloc <name>              allocate a heap page, bind it to a name
    heap-put <name> <slot> <value> (autocommits if no txn is open)
    heap-del <name> <slot>
    heap-get <name> <slot>
    bulk <count> <prefix>          sequential autocommitted inserts
    random-ops <count>             seeded mixed workload
    checkpoint
    evict                          drop every clean frame (forces reloads)
    crash                          discard volatile state, restart, check
    verify                         offline sweep; divergences recorded

Ops inside ``begin``/``commit`` run in that transaction; outside, each op
is its own committed transaction.  The ShadowOracle tracks the logical
state a correct store must show: effects of committed transactions only.
It is fed by the runner (never by reading engine files) and checked after
every crash/restart and at end of run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from phoenix.disk import Disk
from phoenix.engine import Store, StoreConfig
from phoenix.errors import UsageError
from phoenix.page_store import FAULT_MODES, FaultPlan, FaultRule


class ShadowOracle:
    """Committed logical state: B-tree keys and heap slots."""

    def __init__(self):
        self.kv: dict[bytes, bytes] = {}
        self.heap: dict[tuple[int, int], bytes] = {}
        # effects of the currently open transactions, applied on commit
        self.pending: dict[int, list] = {}

    def note(self, txn_id: int, op: tuple):
        self.pending.setdefault(txn_id, []).append(op)

    def commit(self, txn_id: int):
        for op in self.pending.pop(txn_id, []):
            kind = op[0]
            if kind == "put":
                self.kv[op[1]] = op[2]
            elif kind == "del":
                self.kv.pop(op[1], None)
            elif kind == "heap-put":
                self.heap[(op[1], op[2])] = op[3]
            elif kind == "heap-del":
                self.heap.pop((op[1], op[2]), None)

    def abort(self, txn_id: int):
        self.pending.pop(txn_id, None)

    def snapshot(self) -> tuple[dict, dict]:
        return dict(self.kv), dict(self.heap)


@dataclass
class Scenario:
    seed: int = 0
    init_pages: int = 64
    fault_plan: FaultPlan = field(default_factory=FaultPlan)
    steps: list[tuple] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        sc = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            op, args = parts[0], parts[1:]
            try:
                if op == "seed":
                    sc.seed = int(args[0])
                    sc.fault_plan.seed = sc.seed
                elif op == "init":
                    sc.init_pages = int(args[0])
                elif op == "fault":
                    rng, count, mode = args
                    if mode not in FAULT_MODES:
                        raise UsageError(f"unknown fault mode {mode}")
                    if ".." in rng:
                        lo, hi = rng.split("..")
                        rule = FaultRule(int(lo), int(hi) + 1, int(count),
                                         mode)
                    else:
                        pid = int(rng)
                        rule = FaultRule(pid, pid + 1, int(count), mode)
                    sc.fault_plan.rules.append(rule)
                elif op in ("begin", "commit", "abort", "del", "get",
                            "heap-alloc"):
                    sc.steps.append((op, args[0]))
                elif op in ("put", "insert"):
                    sc.steps.append((op, args[0], args[1]))
                elif op == "heap-put":
                    sc.steps.append((op, args[0], int(args[1]), args[2]))
                elif op in ("heap-del", "heap-get"):
                    sc.steps.append((op, args[0], int(args[1])))
                elif op == "bulk":
                    sc.steps.append((op, int(args[0]), args[1]))
                elif op == "random-ops":
                    sc.steps.append((op, int(args[0])))
                elif op in ("checkpoint", "evict", "crash", "verify"):
                    sc.steps.append((op,))
                else:
                    raise UsageError(f"unknown directive {op}")
            except (IndexError, ValueError) as exc:
                raise UsageError(f"line {lineno}: {raw!r}: {exc}") from exc
        return sc


class ScenarioRunner:
    """Execute a scenario against a store, keeping the oracle in lockstep
    and recording divergences."""

    def __init__(self, scenario: Scenario,
                 config: StoreConfig | None = None,
                 disk: Disk | None = None, store: Store | None = None):
        self.scenario = scenario
        self.config = config or StoreConfig()
        self.disk = disk
        self.store = store
        self.oracle = ShadowOracle()
        self.rng = random.Random(scenario.seed)
        self.txns: dict[str, object] = {}      # scenario name -> Txn
        self.heap_pages: dict[str, int] = {}   # scenario name -> page id
        self.heap_order: list[str] = []
        self.divergences: list[str] = []
        self.events: list[dict] = []
        # one event stream across crash incarnations of the store
        self.store_events: list[dict] = []

    # -- plumbing ------------------------------------------------------------

    def _emit(self, event: str, **fields):
        self.events.append({"event": event, **fields})

    def _ensure_store(self):
        if self.store is None:
            if self.disk is None:
                self.disk = Disk(self.config.io_delay_us)
            if "data.db" in self.disk.files:
                self.store = Store.open(self.disk, self.config,
                                        self.scenario.fault_plan)
            else:
                self.store = Store.create(self.disk, self.config,
                                          self.scenario.init_pages,
                                          self.scenario.fault_plan)
            self.store_events.extend(self.store.events)
            self.store.events = self.store_events
        return self.store

    def _txn_for(self, name: str | None):
        """Named transaction, or a fresh autocommit one (returned with
        autocommit=True)."""
        if name is not None and name in self.txns:
            return self.txns[name], False
        return self.store.begin(), True

    def _finish(self, txn, autocommit: bool):
        if autocommit:
            # oracle first: the commit's own flush is a durability boundary
            # at which the transaction must already count as committed
            self.oracle.commit(txn.txn_id)
            self.store.commit(txn)

    # -- execution -------------------------------------------------------------

    def run(self) -> dict:
        store = self._ensure_store()
        for step in self.scenario.steps:
            self._step(step)
        self._check("end_of_run")
        store.checkpoint()
        return self.report()

    def _step(self, step: tuple):
        op = step[0]
        store = self.store
        if op == "begin":
            self.txns[step[1]] = store.begin()
        elif op == "commit":
            txn = self.txns.pop(step[1])
            self.oracle.commit(txn.txn_id)
            store.commit(txn)
        elif op == "abort":
            txn = self.txns.pop(step[1])
            store.abort(txn)
            self.oracle.abort(txn.txn_id)
        elif op in ("put", "insert"):
            _, key, value = step
            txn, auto = self._txn_for(self._open_txn())
            getattr(store, op)(txn, key.encode(), value.encode())
            self.oracle.note(txn.txn_id, ("put", key.encode(),
                                          value.encode()))
            self._finish(txn, auto)
        elif op == "del":
            txn, auto = self._txn_for(self._open_txn())
            store.delete(txn, step[1].encode())
            self.oracle.note(txn.txn_id, ("del", step[1].encode()))
            self._finish(txn, auto)
        elif op == "get":
            value = store.get(step[1].encode())
            expect = self._oracle_get(step[1].encode())
            self._emit("get", key=step[1],
                       value=value.decode() if value else None)
            if value != expect:
                self._diverge(f"get {step[1]}: store={value!r} "
                              f"oracle={expect!r}")
        elif op == "heap-alloc":
            pid = store.heap_alloc()
            self.heap_pages[step[1]] = pid
            self.heap_order.append(step[1])
            self._emit("heap_alloc", name=step[1], page=pid)
        elif op == "heap-put":
            _, name, slot, value = step
            pid = self.heap_pages[name]
            txn, auto = self._txn_for(self._open_txn())
            store.heap_put(txn, pid, slot, value.encode())
            self.oracle.note(txn.txn_id, ("heap-put", pid, slot,
                                          value.encode()))
            self._finish(txn, auto)
        elif op == "heap-del":
            _, name, slot = step
            pid = self.heap_pages[name]
            txn, auto = self._txn_for(self._open_txn())
            store.heap_put(txn, pid, slot, None)
            self.oracle.note(txn.txn_id, ("heap-del", pid, slot))
            self._finish(txn, auto)
        elif op == "heap-get":
            _, name, slot = step
            pid = self.heap_pages[name]
            value = store.heap_get(pid, slot)
            expect = self.oracle.heap.get((pid, slot))
            self._emit("heap_get", name=name, slot=slot,
                       value=value.decode() if value else None)
            if value != expect:
                self._diverge(f"heap-get {name}[{slot}]: store={value!r} "
                              f"oracle={expect!r}")
        elif op == "bulk":
            _, count, prefix = step
            for i in range(count):
                key = f"{prefix}{i:08d}".encode()
                txn = store.begin()
                store.put(txn, key, b"value-%d" % i)
                self.oracle.kv[key] = b"value-%d" % i
                store.commit(txn)
        elif op == "random-ops":
            self._random_ops(step[1])
        elif op == "checkpoint":
            store.checkpoint()
        elif op == "evict":
            self._evict_clean()
        elif op == "crash":
            self._crash()
        elif op == "verify":
            report = store.verify_store()
            self._emit("verify", problems=report)
            if report:
                self._diverge(f"verify: {report}")
        else:
            raise UsageError(f"unknown step {op}")

    def _open_txn(self) -> str | None:
        # scenario ops without an explicit txn reuse the single open one
        return next(iter(self.txns), None)

    def _oracle_get(self, key: bytes):
        # include the open transaction's own uncommitted effects
        value = self.oracle.kv.get(key)
        for ops in self.oracle.pending.values():
            for op in ops:
                if op[0] == "put" and op[1] == key:
                    value = op[2]
                elif op[0] == "del" and op[1] == key:
                    value = None
        return value

    def _random_ops(self, count: int):
        """Seeded mixed workload: B-tree upserts/deletes/gets plus heap
        traffic, all autocommitted so crash points lose at most the
        in-flight operation."""
        store = self.store
        if not self.heap_pages:
            self.heap_pages["h0"] = store.heap_alloc()
            self.heap_order.append("h0")
        for _ in range(count):
            roll = self.rng.random()
            if roll < 0.45:
                key = b"r%06d" % self.rng.randrange(count * 2)
                value = b"x%08d" % self.rng.randrange(10 ** 8)
                txn = store.begin()
                store.put(txn, key, value)
                self.oracle.kv[key] = value
                store.commit(txn)
            elif roll < 0.55 and self.oracle.kv:
                key = self.rng.choice(sorted(self.oracle.kv))
                txn = store.begin()
                store.delete(txn, key)
                del self.oracle.kv[key]
                store.commit(txn)
            elif roll < 0.8:
                name = self.rng.choice(self.heap_order)
                pid = self.heap_pages[name]
                slot = self.rng.randrange(8)
                value = b"h%06d" % self.rng.randrange(10 ** 6)
                txn = store.begin()
                store.heap_put(txn, pid, slot, value)
                self.oracle.heap[(pid, slot)] = value
                store.commit(txn)
            else:
                key = b"r%06d" % self.rng.randrange(count * 2)
                got = store.get(key)
                if got != self.oracle.kv.get(key):
                    self._diverge(f"random get {key!r}: {got!r} != "
                                  f"{self.oracle.kv.get(key)!r}")

    def _evict_clean(self):
        pool = self.store.pool
        for pid in list(pool.frames):
            frame = pool.frames[pid]
            if not frame.dirty and not frame.pin_count:
                pool.drop(pid)
        self._emit("evicted")

    def _crash(self):
        """Lose all volatile state: reopen the store from the durable
        files alone, abandoning open transactions, then check the oracle."""
        for name, txn in self.txns.items():
            self.oracle.abort(txn.txn_id)
        self.txns.clear()
        self.disk = self.disk.clone()
        self.store = Store.open(self.disk, self.config,
                                self.scenario.fault_plan)
        self.store_events.extend(self.store.events)
        self.store.events = self.store_events
        self._emit("crash_restart")
        self._check("after_crash")

    def _check(self, where: str):
        """Compare the store's full logical state against the oracle's
        committed state."""
        kv, heap_state = self.oracle.snapshot()
        got = dict(self.store.scan_all())
        if got != kv:
            missing = sorted(set(kv) - set(got))[:5]
            extra = sorted(set(got) - set(kv))[:5]
            wrong = [k for k in kv if k in got and got[k] != kv[k]][:5]
            self._diverge(f"{where}: tree mismatch missing={missing} "
                          f"extra={extra} wrong={wrong}")
        for (pid, slot), value in heap_state.items():
            try:
                got_v = self.store.heap_get(pid, slot)
            except Exception as exc:   # noqa: BLE001 - report, don't mask
                self._diverge(f"{where}: heap read {pid}[{slot}]: {exc}")
                continue
            if got_v != value:
                self._diverge(f"{where}: heap {pid}[{slot}] = {got_v!r}, "
                              f"oracle {value!r}")

    def _diverge(self, msg: str):
        self.divergences.append(msg)
        self._emit("divergence", detail=msg)

    def report(self) -> dict:
        return {
            "seed": self.scenario.seed,
            "divergences": self.divergences,
            "counters": self.store.counters(),
            "store_events": self.store_events,
            "runner_events": self.events,
        }


def run_scenario_text(text: str, config: StoreConfig | None = None) -> dict:
    runner = ScenarioRunner(Scenario.parse(text), config)
    return runner.run()


# -- crash-point sweeps ---------------------------------------------------------


def crash_sweep(text: str, config: StoreConfig | None = None,
                sample: int | None = None, sample_seed: int = 0,
                open_config: StoreConfig | None = None) -> dict:
    """Run a scenario once, snapshotting the committed oracle state at
    every durability boundary (each log flush and page write); then crash
    the store at each boundary by rebuilding the disk from its journal
    prefix, restart, and compare the logical state to the snapshot.

    ``sample``, if given, checks a seeded random subset of the boundaries.
    Returns the boundary count, divergences, and per-point restart stats.
    """
    config = config or StoreConfig()
    scenario = Scenario.parse(text)
    runner = ScenarioRunner(scenario, config, disk=Disk(config.io_delay_us))
    snapshots: dict[int, tuple[dict, dict]] = {}
    disk = runner.disk

    def hook(name, offset, data):
        snapshots[len(disk.journal)] = runner.oracle.snapshot()

    disk.write_hooks.append(hook)
    runner._ensure_store()
    first_point = len(disk.journal)   # skip boundaries inside create()
    report = runner.run()
    if report["divergences"]:
        return {"points": 0, "divergences": report["divergences"],
                "restarts": []}
    points = sorted(k for k in snapshots if k >= first_point)
    if sample is not None and sample < len(points):
        points = sorted(random.Random(sample_seed).sample(points, sample))
    divergences: list[str] = []
    restarts: list[dict] = []
    for k in points:
        kv, heap_state = snapshots[k]
        fork = disk.fork_at(k)
        try:
            store = Store.open(fork, open_config or config)
        except Exception as exc:   # noqa: BLE001 - a failed restart is a bug
            divergences.append(f"point {k}: restart failed: {exc}")
            continue
        got = dict(store.scan_all())
        if got != kv:
            missing = sorted(set(kv) - set(got))[:3]
            extra = sorted(set(got) - set(kv))[:3]
            divergences.append(
                f"point {k}: tree missing={missing} extra={extra}")
        for (pid, slot), value in heap_state.items():
            got_v = store.heap_get(pid, slot)
            if got_v != value:
                divergences.append(
                    f"point {k}: heap {pid}[{slot}]={got_v!r} "
                    f"oracle {value!r}")
        restarts.append({"point": k, **store.last_restart})
    return {"points": len(points), "divergences": divergences,
            "restarts": restarts}
