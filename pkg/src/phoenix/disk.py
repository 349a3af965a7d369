"""In-memory disk with a durable-write journal.

All durable state (data file, log file, backup file) lives in named byte
files on a Disk.  Every write is journaled, which gives two things:

* crash simulation: ``fork_at(k)`` rebuilds the disk as it stood after the
  first k durable writes, so a scenario can be crashed at every durability
  boundary without OS-level process kills;
* previous-version tracking for fault injection (torn and stale reads need
  the prior image of a slot).

An optional per-I/O synthetic delay emulates device latency for the
recovery-time benchmarks.  Files can be saved to / loaded from a directory
so the CLI operates on real files between runs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field


@dataclass
class IoCounters:
    reads: int = 0
    writes: int = 0

    def snapshot(self) -> dict:
        return {"reads": self.reads, "writes": self.writes}


@dataclass
class _WriteEvent:
    name: str
    offset: int
    data: bytes


class Disk:
    def __init__(self, io_delay_us: int = 0):
        self.files: dict[str, bytearray] = {}
        self.journal: list[_WriteEvent] = []
        self.io_delay_us = io_delay_us
        self.counters: dict[str, IoCounters] = {}
        self.write_hooks = []  # callables (name, offset, data)

    def _delay(self):
        if self.io_delay_us:
            deadline = time.perf_counter() + self.io_delay_us / 1e6
            while time.perf_counter() < deadline:
                pass

    def _counter(self, name: str) -> IoCounters:
        if name not in self.counters:
            self.counters[name] = IoCounters()
        return self.counters[name]

    def create(self, name: str):
        if name in self.files:
            raise FileExistsError(name)
        self.files[name] = bytearray()

    def size(self, name: str) -> int:
        return len(self.files[name])

    def write(self, name: str, offset: int, data: bytes):
        buf = self.files[name]
        if len(buf) < offset + len(data):
            buf.extend(b"\x00" * (offset + len(data) - len(buf)))
        data = bytes(data)
        buf[offset:offset + len(data)] = data
        self.journal.append(_WriteEvent(name, offset, data))
        self._counter(name).writes += 1
        self._delay()
        for hook in self.write_hooks:
            hook(name, offset, data)

    def read(self, name: str, offset: int, length: int) -> bytes:
        buf = self.files[name]
        self._counter(name).reads += 1
        self._delay()
        return bytes(buf[offset:offset + length])

    def read_quiet(self, name: str, offset: int, length: int) -> bytes:
        """Read without counting or delaying (verification sweeps, oracles)."""
        return bytes(self.files[name][offset:offset + length])

    def poke(self, name: str, offset: int, data: bytes):
        """Mutate bytes without journaling: test-only corruption hook."""
        buf = self.files[name]
        buf[offset:offset + len(data)] = data

    # -- crash simulation -------------------------------------------------

    def journal_len(self) -> int:
        return len(self.journal)

    def prior_image(self, name: str, offset: int, length: int) -> bytes | None:
        """Bytes of [offset, offset+length) before its most recent write."""
        found_last = False
        img = None
        for ev in reversed(self.journal):
            if ev.name != name or ev.offset != offset or len(ev.data) != length:
                continue
            if not found_last:
                found_last = True
                continue
            img = ev.data
            break
        return img

    def fork_at(self, k: int, io_delay_us: int | None = None) -> "Disk":
        """A new Disk holding only the first k durable writes."""
        d = Disk(self.io_delay_us if io_delay_us is None else io_delay_us)
        for name in self.files:
            d.files[name] = bytearray()
        for ev in self.journal[:k]:
            buf = d.files[ev.name]
            if len(buf) < ev.offset + len(ev.data):
                buf.extend(b"\x00" * (ev.offset + len(ev.data) - len(buf)))
            buf[ev.offset:ev.offset + len(ev.data)] = ev.data
            d.journal.append(ev)
        return d

    def clone(self) -> "Disk":
        return self.fork_at(len(self.journal))

    # -- directory persistence -------------------------------------------

    def save_dir(self, path: str):
        os.makedirs(path, exist_ok=True)
        for name, buf in self.files.items():
            with open(os.path.join(path, name), "wb") as f:
                f.write(buf)

    @classmethod
    def load_dir(cls, path: str, io_delay_us: int = 0) -> "Disk":
        d = cls(io_delay_us)
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if os.path.isfile(full):
                with open(full, "rb") as f:
                    d.files[name] = bytearray(f.read())
        return d
