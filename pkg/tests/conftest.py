"""Shared fixtures: small stores sized for fast unit tests."""

import random

import pytest

from phoenix.disk import Disk
from phoenix.engine import Store, StoreConfig


def make_store(pages: int = 32, **overrides):
    defaults = dict(pool_frames=16, backup_interval=8)
    defaults.update(overrides)
    cfg = StoreConfig(**defaults)
    disk = Disk()
    store = Store.create(disk, cfg, pages)
    return disk, store


@pytest.fixture
def store():
    _, s = make_store()
    return s


def mixed_load(store, keys: int = 60, heap_vals: int = 20, seed: int = 1):
    """Populate both the tree and a couple of heap pages; return oracles."""
    rng = random.Random(seed)
    kv = {}
    t = store.begin()
    for i in range(keys):
        k = f"k{i:05d}".encode()
        v = rng.randbytes(rng.randrange(1, 40))
        store.put(t, k, v)
        kv[k] = v
    store.commit(t)
    from phoenix.heap import slots_per_page
    from phoenix.pages import body_size
    per_page = slots_per_page(body_size(store.config.page_size))
    heap = {}
    hp = None
    t = store.begin()
    for i in range(heap_vals):
        if i % per_page == 0:
            hp = store.heap_alloc()
        s = i % per_page
        v = rng.randbytes(rng.randrange(1, 30))
        store.heap_put(t, hp, s, v)
        heap[(hp, s)] = v
    store.commit(t)
    return kv, heap, hp
