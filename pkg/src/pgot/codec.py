"""Bit-exact primitives: fixed-point money, canonical serialization, content ids.

Every artifact that gets hashed, signed or stored goes through
:func:`canonical_bytes`. The wire grammar is a small tagged, length-prefixed
format; registered dataclasses are written as records whose fields appear in
declaration order, so two equal objects always produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, TypeVar

FRACTION_BITS = 16
SCALE = 1 << FRACTION_BITS
RAW_LIMIT = 1 << 128  # uint128 container, 2^112 integer units

HASH_FN = "sha256"
TREE_FANOUT = 2
ROUNDING_MODE = "ties_to_zero"

FRAME_MAGIC = b"PGOT\x01"

_DECIMAL_RE = re.compile(r"^(\d+)(?:\.(\d+))?$")


class ParseError(ValueError):
    """Malformed decimal numeral or byte frame."""


class SchemaError(TypeError):
    """Object has no registered canonical schema."""


# ---------------------------------------------------------------------------
# Fixed-point amounts
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class FixedAmount:
    """Nonnegative monetary quantity with 16 fractional bits."""

    raw: int

    def __post_init__(self) -> None:
        if not isinstance(self.raw, int) or isinstance(self.raw, bool):
            raise TypeError(f"raw must be int, got {type(self.raw).__name__}")
        if self.raw < 0:
            raise ValueError("monetary amounts are nonnegative")
        if self.raw >= RAW_LIMIT:
            raise OverflowError("amount exceeds 2^112 integer units")

    @classmethod
    def parse(cls, text: str) -> FixedAmount:
        return to_fixed(text)

    @classmethod
    def from_fraction(cls, value: Fraction | int) -> FixedAmount:
        value = Fraction(value)
        if value < 0:
            raise ValueError("monetary amounts are nonnegative")
        return cls(value.numerator * SCALE // value.denominator)

    def to_fraction(self) -> Fraction:
        return Fraction(self.raw, SCALE)

    def to_bytes(self) -> bytes:
        return self.raw.to_bytes(16, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> FixedAmount:
        if len(data) != 16:
            raise ParseError("uint128 amount must be 16 bytes")
        return cls(int.from_bytes(data, "big"))

    def __add__(self, other: FixedAmount) -> FixedAmount:
        return FixedAmount(self.raw + other.raw)

    def __sub__(self, other: FixedAmount) -> FixedAmount:
        if other.raw > self.raw:
            raise ValueError("subtraction would underflow")
        return FixedAmount(self.raw - other.raw)

    def __str__(self) -> str:
        return format_decimal(self.to_fraction())

    def __repr__(self) -> str:
        return f"FixedAmount({self})"


FixedAmount.ZERO = FixedAmount(0)  # type: ignore[attr-defined]


def to_fixed(value: str) -> FixedAmount:
    """Parse a nonnegative decimal numeral, flooring at 2^-16."""
    if not isinstance(value, str):
        raise ParseError(f"expected decimal string, got {type(value).__name__}")
    if not _DECIMAL_RE.match(value):
        raise ParseError(f"malformed decimal numeral: {value!r}")
    return FixedAmount.from_fraction(Fraction(value))


def floor_fixed(value: Fraction | int) -> FixedAmount:
    return FixedAmount.from_fraction(value)


def _truncate(value: Fraction, digits: int) -> Fraction:
    unit = 10**digits
    return Fraction(value.numerator * unit // value.denominator, unit)


def format_decimal(value: Fraction | int) -> str:
    """Render ``value`` as the shortest truncation that parses back losslessly.

    The returned string ``s`` always satisfies
    ``to_fixed(s) == floor_fixed(value)``. For a value already on the 2^-16
    grid this is its exact decimal expansion; for a formula value such as
    200/7 it is the familiar truncated form ``"28.571428"``.
    """
    value = Fraction(value)
    if value < 0:
        raise ValueError("monetary amounts are nonnegative")
    target = value.numerator * SCALE // value.denominator
    digits = 1
    while True:
        cut = _truncate(value, digits)
        if cut.numerator * SCALE // cut.denominator == target:
            whole, frac = divmod(cut.numerator * 10**digits // cut.denominator, 10**digits)
            return f"{whole}.{frac:0{digits}d}"
        digits += 1


def parse_ratio(text: str) -> Fraction:
    """Exact value of a decimal parameter string such as ``"0.70"``."""
    if not _DECIMAL_RE.match(text):
        raise ParseError(f"malformed decimal numeral: {text!r}")
    return Fraction(text)


# ---------------------------------------------------------------------------
# Identifiers and content ids
# ---------------------------------------------------------------------------

ID_LENGTHS = {"contributor_pid": 32, "node_id": 32, "round_id": 8, "cohort_id": 1}


def identifier(kind: str, value: bytes | int) -> bytes:
    """Serialize an identifier of ``kind``; lengths are fixed per kind."""
    if kind not in ID_LENGTHS:
        raise ValueError(f"unknown identifier kind {kind!r}")
    size = ID_LENGTHS[kind]
    if isinstance(value, int):
        if value < 0 or value >= 1 << (8 * size):
            raise ValueError(f"{kind} out of range")
        return value.to_bytes(size, "big")
    if len(value) != size:
        raise ValueError(f"{kind} must be {size} bytes, got {len(value)}")
    return bytes(value)


def round_id_bytes(round_id: int) -> bytes:
    return identifier("round_id", round_id)


@dataclass(frozen=True, order=True)
class Cid:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != 32:
            raise ValueError("cid digest must be 32 bytes")

    def __str__(self) -> str:
        return "cid:" + self.digest.hex()

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def parse(cls, text: str) -> Cid:
        if not text.startswith("cid:") or len(text) != 68:
            raise ParseError(f"malformed cid: {text!r}")
        try:
            return cls(bytes.fromhex(text[4:]))
        except ValueError as exc:
            raise ParseError(f"malformed cid: {text!r}") from exc


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

_SCHEMAS: dict[str, type] = {}
T = TypeVar("T")


def schema(name: str) -> Callable[[type[T]], type[T]]:
    """Register a dataclass for canonical encoding under ``name``."""

    def register(cls: type[T]) -> type[T]:
        if not dataclasses.is_dataclass(cls):
            raise SchemaError(f"{cls.__name__} is not a dataclass")
        if name in _SCHEMAS and _SCHEMAS[name] is not cls:
            raise SchemaError(f"schema name {name!r} already registered")
        _SCHEMAS[name] = cls
        cls.__schema_name__ = name  # type: ignore[attr-defined]
        return cls

    return register


def _u32(n: int) -> bytes:
    return struct.pack(">I", n)


def _encode(value: Any, out: list[bytes]) -> None:
    # bool before int: bool is an int subclass
    if value is None:
        out.append(b"N")
    elif value is True:
        out.append(b"T")
    elif value is False:
        out.append(b"F")
    elif isinstance(value, int):
        mag = abs(value)
        body = mag.to_bytes((mag.bit_length() + 7) // 8, "big")
        out.append(b"I" + (b"-" if value < 0 else b"+") + _u32(len(body)) + body)
    elif isinstance(value, float):
        text = repr(value).encode()
        out.append(b"D" + _u32(len(text)) + text)
    elif isinstance(value, str):
        text = value.encode("utf-8")
        out.append(b"S" + _u32(len(text)) + text)
    elif isinstance(value, (bytes, bytearray)):
        out.append(b"B" + _u32(len(value)) + bytes(value))
    elif isinstance(value, FixedAmount):
        text = str(value).encode()
        out.append(b"M" + _u32(len(text)) + text)
    elif isinstance(value, Cid):
        out.append(b"C" + value.digest)
    elif isinstance(value, Fraction):
        text = f"{value.numerator}/{value.denominator}".encode()
        out.append(b"Q" + _u32(len(text)) + text)
    elif isinstance(value, (list, tuple)):
        out.append(b"L" + _u32(len(value)))
        for item in value:
            _encode(item, out)
    elif isinstance(value, dict):
        keys = sorted(value)
        out.append(b"K" + _u32(len(keys)))
        for key in keys:
            _encode(key, out)
            _encode(value[key], out)
    elif dataclasses.is_dataclass(value) and hasattr(type(value), "__schema_name__"):
        name = type(value).__schema_name__.encode()
        fields = dataclasses.fields(value)
        out.append(b"R" + _u32(len(name)) + name + _u32(len(fields)))
        for field in fields:
            _encode(getattr(value, field.name), out)
    else:
        raise SchemaError(f"no canonical schema for {type(value).__name__}")


def canonical_bytes(value: Any) -> bytes:
    out = [FRAME_MAGIC]
    _encode(value, out)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("truncated canonical frame")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def value(self) -> Any:
        tag = self.take(1)
        if tag == b"N":
            return None
        if tag == b"T":
            return True
        if tag == b"F":
            return False
        if tag == b"I":
            sign = self.take(1)
            mag = int.from_bytes(self.take(self.u32()), "big")
            return -mag if sign == b"-" else mag
        if tag == b"D":
            return float(self.take(self.u32()).decode())
        if tag == b"S":
            return self.take(self.u32()).decode("utf-8")
        if tag == b"B":
            return self.take(self.u32())
        if tag == b"M":
            return to_fixed(self.take(self.u32()).decode())
        if tag == b"C":
            return Cid(self.take(32))
        if tag == b"Q":
            num, den = self.take(self.u32()).decode().split("/")
            return Fraction(int(num), int(den))
        if tag == b"L":
            return tuple(self.value() for _ in range(self.u32()))
        if tag == b"K":
            count = self.u32()
            items = {}
            for _ in range(count):
                key = self.value()
                items[key] = self.value()
            return items
        if tag == b"R":
            name = self.take(self.u32()).decode()
            if name not in _SCHEMAS:
                raise SchemaError(f"unknown schema {name!r}")
            values = [self.value() for _ in range(self.u32())]
            return _SCHEMAS[name](*values)
        raise ParseError(f"unknown tag {tag!r}")


def decode(data: bytes) -> Any:
    if not data.startswith(FRAME_MAGIC):
        raise ParseError("missing canonical frame header")
    reader = _Reader(data)
    reader.pos = len(FRAME_MAGIC)
    value = reader.value()
    if reader.pos != len(data):
        raise ParseError("trailing bytes after canonical value")
    return value


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def cid_of_bytes(data: bytes) -> Cid:
    return Cid(sha256(data))


def cid_of(value: Any) -> Cid:
    return cid_of_bytes(canonical_bytes(value))
