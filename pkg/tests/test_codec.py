from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgot.codec import (
    SCALE,
    Cid,
    FixedAmount,
    ParseError,
    canonical_bytes,
    cid_of,
    decode,
    floor_fixed,
    format_decimal,
    identifier,
    round_id_bytes,
    to_fixed,
)


@pytest.mark.parametrize(
    "text, raw",
    [
        ("950.0", 62259200),
        ("28.571428", 1872457),
        ("0.01", 655),
        ("39.6", 2595225),
        ("560.4", 36726374),
        ("1.0", 65536),
        ("0", 0),
    ],
)
def test_to_fixed_floors_onto_grid(text, raw):
    assert to_fixed(text).raw == raw


def test_fee_string_is_truncated_form():
    assert format_decimal(Fraction(200, 7)) == "28.571428"
    assert to_fixed("28.571428") == floor_fixed(Fraction(200, 7))


def test_grid_values_render_exactly():
    assert str(FixedAmount(1)) == "0.0000152587890625"
    assert str(FixedAmount(3 * SCALE // 2)) == "1.5"
    assert str(FixedAmount(0)) == "0.0"


@pytest.mark.parametrize("bad", ["-1.0", "1e3", ".5", "1.", "abc", " 1.0"])
def test_malformed_numerals(bad):
    with pytest.raises(ParseError):
        to_fixed(bad)


def test_amount_bounds():
    with pytest.raises(ValueError):
        FixedAmount(-1)
    with pytest.raises(OverflowError):
        FixedAmount(1 << 128)
    with pytest.raises(ValueError):
        FixedAmount(1) - FixedAmount(2)


@given(st.fractions(min_value=0, max_value=10**9))
def test_rendering_parses_back_to_floor(value):
    assert to_fixed(format_decimal(value)) == floor_fixed(value)


@given(st.integers(min_value=0, max_value=(1 << 100)))
def test_amount_bytes_roundtrip(raw):
    a = FixedAmount(raw)
    assert FixedAmount.from_bytes(a.to_bytes()) == a
    assert to_fixed(str(a)) == a


values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(1 << 200), max_value=1 << 200)
    | st.binary(max_size=40)
    | st.text(max_size=20)
    | st.fractions()
    | st.builds(FixedAmount, st.integers(min_value=0, max_value=1 << 100)),
    lambda inner: st.lists(inner, max_size=5).map(tuple) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=20,
)


@given(values)
def test_canonical_roundtrip(v):
    data = canonical_bytes(v)
    assert canonical_bytes(decode(data)) == data
    assert cid_of(v) == cid_of(decode(data))


def test_dict_order_does_not_change_encoding():
    assert canonical_bytes({"a": 1, "b": 2}) == canonical_bytes({"b": 2, "a": 1})


def test_identifier_lengths():
    assert len(identifier("round_id", 7)) == 8
    assert round_id_bytes(7) == (7).to_bytes(8, "big")
    with pytest.raises(ValueError):
        identifier("contributor_pid", b"short")


def test_cid_is_sha256_of_canonical_bytes():
    import hashlib

    v = ("x", 1, b"\x00")
    assert cid_of(v) == Cid(hashlib.sha256(canonical_bytes(v)).digest())
