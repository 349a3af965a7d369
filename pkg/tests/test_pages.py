"""Page codec: round trips, checksum coverage of every byte, and the
byte-delta codec checked against direct slicing."""

import pytest
from hypothesis import given, settings, strategies as st

from phoenix.errors import DetectedFailure
from phoenix.pages import (Page, PageKind, apply_delta, body_size,
                           byte_delta, page_from_bytes)

PS = 512  # small pages keep the exhaustive sweep cheap


def make_page(pid=3, kind=PageKind.HEAP, lsn=77, uc=2, fill=b"x"):
    return Page(pid, kind, lsn, uc, fill * body_size(PS))


def test_roundtrip():
    p = make_page()
    q = page_from_bytes(p.to_bytes(PS), expected_id=3)
    assert (q.id, q.kind, q.page_lsn, q.update_count, q.body) \
        == (p.id, p.kind, p.page_lsn, p.update_count, p.body)


def test_every_byte_is_covered_by_checksum():
    raw = make_page().to_bytes(PS)
    for off in range(PS):
        bad = bytearray(raw)
        bad[off] ^= 0x40
        with pytest.raises(DetectedFailure) as exc:
            page_from_bytes(bytes(bad), expected_id=3)
        assert exc.value.cause == "checksum_mismatch"


def test_wrong_page_id_detected():
    raw = make_page(pid=3).to_bytes(PS)
    with pytest.raises(DetectedFailure) as exc:
        page_from_bytes(raw, expected_id=4)
    assert exc.value.cause == "wrong_page_id"
    # without an expectation the self-description is accepted
    assert page_from_bytes(raw).id == 3


@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
def test_delta_roundtrip(old, new):
    deltas = byte_delta(old, new)
    assert apply_delta(old, deltas) == new
    assert apply_delta(new, deltas, undo=True) == old
    if old == new:
        assert deltas == []


def test_delta_is_minimal_contiguous():
    old = b"aaaaaaaaaa"
    new = b"aabbbaaaaa"
    [(off, o, n)] = byte_delta(old, new)
    assert (off, o, n) == (2, b"aaa", b"bbb")
