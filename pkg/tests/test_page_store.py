"""Fault injection determinism and the page-id translation layer."""

import pytest

from phoenix.disk import Disk
from phoenix.errors import DetectedFailure, UsageError
from phoenix.page_store import (FaultInjector, FaultPlan, FaultRule,
                                PageStore, TranslationTable)
from phoenix.pages import Page, PageKind, body_size, page_from_bytes

PS = 512


def make_store(plan=None, slots=8):
    disk = Disk()
    store = PageStore(disk, PS, TranslationTable(slots),
                      FaultInjector(plan, disk, PS))
    for pid in range(4):
        store.write_page(Page(pid, PageKind.HEAP, pid + 1, 0,
                              bytes([pid]) * body_size(PS)))
    return store


def test_plan_grammar():
    plan = FaultPlan.parse("""
        seed 42
        fault 3 2 bitflip          # singleton
        fault 10..12 1 torn
    """)
    assert plan.seed == 42
    assert [(r.lo, r.hi, r.read_count, r.mode) for r in plan.rules] \
        == [(3, 4, 2, "bitflip"), (10, 13, 1, "torn")]
    with pytest.raises(UsageError):
        FaultPlan.parse("fault 3 1 melt")
    with pytest.raises(UsageError):
        FaultPlan.parse("nonsense")


def test_rule_fires_once_on_nth_read():
    plan = FaultPlan.parse("seed 1\nfault 2 2 unreadable")
    store = make_store(plan)
    assert store.read_page(2).id == 2          # first read clean
    with pytest.raises(DetectedFailure):
        store.read_page(2)                     # second read faults
    assert store.read_page(2).id == 2          # once only


def test_raw_read_is_an_uninjected_oracle():
    plan = FaultPlan.parse("seed 5\nfault 1 1 bitflip")
    store = make_store(plan)
    raw = store.read_page_raw(1)
    assert page_from_bytes(raw, expected_id=1).body \
        == b"\x01" * body_size(PS)


def test_bitflip_is_deterministic_per_seed():
    def corrupt(seed):
        plan = FaultPlan.parse(f"seed {seed}\nfault 1 1 bitflip")
        store = make_store(plan)
        return store.injector.filter(1, 1, store.read_page_raw(1))

    assert corrupt(5) == corrupt(5)
    assert corrupt(5) != corrupt(6)
    with pytest.raises(DetectedFailure):
        page_from_bytes(corrupt(5), expected_id=1)


def test_torn_and_stale_need_history():
    plan = FaultPlan.parse("seed 0\nfault 1 1 torn\nfault 2 1 stale")
    store = make_store(plan)
    v2 = Page(1, PageKind.HEAP, 9, 1, b"B" * body_size(PS))
    store.write_page(v2)
    store.write_page(Page(2, PageKind.HEAP, 9, 1, b"C" * body_size(PS)))
    raw = store.injector.filter(1, 1, store.read_page_raw(1))
    assert raw[:PS // 2] == v2.to_bytes(PS)[:PS // 2]  # new head, old tail
    with pytest.raises(DetectedFailure):
        page_from_bytes(raw, expected_id=1)
    stale = store.injector.filter(2, 2, store.read_page_raw(2))
    assert page_from_bytes(stale, expected_id=2).page_lsn == 3


def test_relocation_and_bad_blocks():
    store = make_store()
    old_slot = store.table.slot_of(3)
    new_slot = store.relocate(3)
    assert new_slot != old_slot
    assert old_slot in store.table.bad_blocks
    store.write_page(Page(3, PageKind.HEAP, 50, 0, b"R" * body_size(PS)))
    assert store.read_page(3).body[0:1] == b"R"
    store.table.check()
