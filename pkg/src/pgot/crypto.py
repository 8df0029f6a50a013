"""Field arithmetic, pairwise PRG masks, Shamir sharing, Pedersen commitments.

Masked vectors live in GF(q) with q = 2^128 - 159. The same q is the order of
the Schnorr subgroup used for vector Pedersen commitments, so a commitment to
a field vector is homomorphic in exactly the arithmetic the aggregation uses.
Field vectors are numpy ``object`` arrays of Python ints.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .codec import SCALE, schema

FIELD_PRIME = (1 << 128) - 159
HALF_FIELD = FIELD_PRIME // 2

# Schnorr group: GROUP_P = COFACTOR * FIELD_PRIME + 1, subgroup of order FIELD_PRIME.
COFACTOR = (1 << 895) + 640
GROUP_P = COFACTOR * FIELD_PRIME + 1
GROUP_BYTES = (GROUP_P.bit_length() + 7) // 8

GENERATOR_TAG = b"pgot/pedersen/v1"
PRG_NAME = "sha256-ctr"
DEFAULT_MAX_DIM = 1 << 16

_P = gmpy2.mpz(GROUP_P)


class ThresholdError(ValueError):
    pass


class InsufficientSharesError(ValueError):
    pass


class DuplicateShareError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class EmptyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Field vectors
# ---------------------------------------------------------------------------


def field_zeros(dim: int) -> np.ndarray:
    return np.array([0] * dim, dtype=object)


def field_vector(values) -> np.ndarray:
    return np.array([int(v) % FIELD_PRIME for v in values], dtype=object)


def quantize(x: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """floor(x * scale) as signed integers embedded in the field."""
    ints = np.floor(np.asarray(x, dtype=np.float64) * scale).astype(np.int64)
    return ints.astype(object) % FIELD_PRIME


def lift(v: np.ndarray) -> np.ndarray:
    """Signed integer representative of each field element."""
    return np.where(v > HALF_FIELD, v - FIELD_PRIME, v)


def dequantize(v: np.ndarray, scale: int = SCALE) -> np.ndarray:
    return lift(v).astype(np.float64) / scale


def field_inverse(a: int) -> int:
    if a % FIELD_PRIME == 0:
        raise ZeroDivisionError("zero has no inverse in the field")
    return pow(a, -1, FIELD_PRIME)


# ---------------------------------------------------------------------------
# Pairwise masks
# ---------------------------------------------------------------------------


def _bytes_to_field(buf: bytes, dim: int) -> np.ndarray:
    words = np.frombuffer(buf, dtype=">u8").reshape(-1, 2)[:dim]
    hi = words[:, 0].astype(object)
    lo = words[:, 1].astype(object)
    return (hi * (1 << 64) + lo) % FIELD_PRIME


def expand_mask(seed: bytes | MaskSeed, dim: int) -> np.ndarray:
    """Expand ``seed`` to ``dim`` field elements with SHA-256 in counter mode."""
    if isinstance(seed, MaskSeed):
        seed = seed.seed
    if dim < 1:
        raise DimensionError("dim must be at least 1")
    blocks = (dim + 1) // 2
    buf = b"".join(
        hashlib.sha256(seed + struct.pack(">Q", i)).digest() for i in range(blocks)
    )
    return _bytes_to_field(buf, dim)


@dataclass(frozen=True)
class MaskSeed:
    """Pairwise seed shared by two contributors; the pair is stored sorted."""

    a: bytes
    b: bytes
    seed: bytes

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("a mask seed needs two distinct parties")
        if self.b < self.a:
            lo, hi = self.b, self.a
            object.__setattr__(self, "a", lo)
            object.__setattr__(self, "b", hi)

    @property
    def pair(self) -> tuple[bytes, bytes]:
        return (self.a, self.b)


def random_seed(rng: random.Random | None = None) -> bytes:
    """A fresh 32-byte seed whose integer value lies in the field."""
    rng = rng or random.SystemRandom()
    return rng.randrange(FIELD_PRIME).to_bytes(32, "big")


def pairwise_mask(owner: bytes, seeds: list[MaskSeed], dim: int) -> np.ndarray:
    """Sum of +PRG(s) for higher-id peers and -PRG(s) for lower-id peers.

    Summed over every party of a fully present group these cancel to zero.
    """
    mask = field_zeros(dim)
    for ms in seeds:
        if owner not in ms.pair:
            raise ValueError("seed does not involve owner")
        peer = ms.b if ms.a == owner else ms.a
        stream = expand_mask(ms.seed, dim)
        mask = mask + stream if peer > owner else mask - stream
    return mask % FIELD_PRIME


# ---------------------------------------------------------------------------
# Shamir secret sharing over GF(q)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShamirShare:
    holder: bytes
    x: int
    y: int
    threshold: int


def shamir_split(
    secret: bytes,
    t: int,
    n: int,
    holders: list[bytes] | None = None,
    rng: random.Random | None = None,
) -> list[ShamirShare]:
    if not 1 <= t:
        raise ThresholdError("threshold must be at least 1")
    if t > n:
        raise ThresholdError(f"threshold {t} exceeds share count {n}")
    value = int.from_bytes(secret, "big")
    if len(secret) != 32 or value >= FIELD_PRIME:
        raise ValueError("secret must be a 32-byte encoding of a field element")
    if holders is None:
        holders = [struct.pack(">Q", i + 1).rjust(32, b"\0") for i in range(n)]
    if len(holders) != n:
        raise ValueError("need one holder per share")
    rng = rng or random.SystemRandom()
    coeffs = [value] + [rng.randrange(FIELD_PRIME) for _ in range(t - 1)]
    shares = []
    for i, holder in enumerate(holders, start=1):
        y = 0
        for c in reversed(coeffs):
            y = (y * i + c) % FIELD_PRIME
        shares.append(ShamirShare(holder, i, y, t))
    return shares


def shamir_reconstruct(shares: list[ShamirShare]) -> bytes:
    if not shares:
        raise InsufficientSharesError("no shares supplied")
    t = shares[0].threshold
    xs = [s.x for s in shares]
    if len(set(xs)) != len(xs):
        raise DuplicateShareError("duplicate share x-coordinate")
    if len(shares) < t:
        raise InsufficientSharesError(f"need {t} shares, got {len(shares)}")
    chosen = shares[:t]
    secret = 0
    for j, sj in enumerate(chosen):
        num, den = 1, 1
        for m, sm in enumerate(chosen):
            if m != j:
                num = num * sm.x % FIELD_PRIME
                den = den * (sm.x - sj.x) % FIELD_PRIME
        secret = (secret + sj.y * num * pow(den, -1, FIELD_PRIME)) % FIELD_PRIME
    return secret.to_bytes(32, "big")


def committee_threshold(m: int) -> int:
    """t = ceil(M/2)."""
    return (m + 1) // 2


def byzantine_bound(m: int) -> int:
    """Largest f with f < M/3."""
    return (m - 1) // 3


# ---------------------------------------------------------------------------
# Pedersen vector commitments
# ---------------------------------------------------------------------------


def _hash_to_group(label: bytes) -> gmpy2.mpz:
    width = GROUP_BYTES + 16
    counter = 0
    while True:
        digest = hashlib.shake_256(GENERATOR_TAG + label + struct.pack(">I", counter)).digest(width)
        g = gmpy2.powmod(gmpy2.mpz(int.from_bytes(digest, "big")) % _P, COFACTOR, _P)
        if g > 1:
            return g
        counter += 1


@lru_cache(maxsize=None)
def _generator(index: int) -> gmpy2.mpz:
    if index < 0:
        return _hash_to_group(b"h")
    return _hash_to_group(b"g" + struct.pack(">Q", index))


class PedersenParams:
    """Independent generators g_1..g_d and h derived by hash-to-group."""

    def __init__(self, max_dim: int = DEFAULT_MAX_DIM) -> None:
        self.max_dim = max_dim
        self._gens: list[gmpy2.mpz] = []

    @property
    def h(self) -> gmpy2.mpz:
        return _generator(-1)

    def generators(self, n: int) -> list[gmpy2.mpz]:
        if n > self.max_dim:
            raise DimensionError(f"vector length {n} exceeds {self.max_dim} generators")
        while len(self._gens) < n:
            self._gens.append(_generator(len(self._gens)))
        return self._gens[:n]


DEFAULT_PARAMS = PedersenParams()


@dataclass(frozen=True)
class Commitment:
    point: int

    def to_bytes(self) -> bytes:
        return int(self.point).to_bytes(GROUP_BYTES, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> Commitment:
        return cls(int.from_bytes(data, "big"))

    def is_valid(self) -> bool:
        return 0 < self.point < GROUP_P and pow(self.point, FIELD_PRIME, GROUP_P) == 1


def _window(n: int) -> int:
    best, best_cost = 1, math.inf
    for c in range(1, 12):
        cost = math.ceil(128 / c) * (n + (1 << (c + 1)))
        if cost < best_cost:
            best, best_cost = c, cost
    return best


def multi_exp(bases: list, exponents: list[int]) -> int:
    """prod(b_i ^ e_i) mod GROUP_P, bucket (Pippenger) method."""
    if len(bases) <= 4:
        acc = gmpy2.mpz(1)
        for b, e in zip(bases, exponents):
            acc = acc * gmpy2.powmod(b, e, _P) % _P
        return int(acc)
    c = _window(len(bases))
    mask = (1 << c) - 1
    nbits = max((e.bit_length() for e in exponents), default=0)
    result = gmpy2.mpz(1)
    for w in range((nbits + c - 1) // c - 1, -1, -1):
        for _ in range(c):
            result = result * result % _P
        buckets: list = [None] * (mask + 1)
        shift = w * c
        for b, e in zip(bases, exponents):
            i = (e >> shift) & mask
            if i:
                cur = buckets[i]
                buckets[i] = b if cur is None else cur * b % _P
        running = gmpy2.mpz(1)
        acc = gmpy2.mpz(1)
        for i in range(mask, 0, -1):
            if buckets[i] is not None:
                running = running * buckets[i] % _P
            acc = acc * running % _P
        result = result * acc % _P
    return int(result)


def commit(vector, blinding: int, params: PedersenParams = DEFAULT_PARAMS) -> Commitment:
    """h^r * prod g_i^{v_i}."""
    values = [int(v) % FIELD_PRIME for v in vector]
    gens = params.generators(len(values))
    bases = [params.h] + gens
    exps = [blinding % FIELD_PRIME] + values
    nonzero = [(b, e) for b, e in zip(bases, exps) if e]
    if not nonzero:
        return Commitment(1)
    bs, es = zip(*nonzero)
    return Commitment(multi_exp(list(bs), list(es)))


def combine(commitments: list[Commitment]) -> Commitment:
    if not commitments:
        raise EmptyError("cannot combine an empty list of commitments")
    acc = gmpy2.mpz(1)
    for c in commitments:
        acc = acc * c.point % _P
    return Commitment(int(acc))


# ---------------------------------------------------------------------------
# Node signatures
# ---------------------------------------------------------------------------


class SigningKey:
    """Ed25519 key; the 32-byte public key doubles as node_id / contributor_pid."""

    def __init__(self, private: Ed25519PrivateKey) -> None:
        self._private = private
        self.public = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @classmethod
    def from_seed(cls, seed: bytes) -> SigningKey:
        return cls(Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest()))

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify_signature(public: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# Published parameters
# ---------------------------------------------------------------------------


@schema("PublicParameters")
@dataclass(frozen=True)
class PublicParameters:
    field_prime: int
    group_p: int
    group_q: int
    cofactor: int
    generator_tag: bytes
    prg: str
    signature_scheme: str
    fixed_point_bits: int


def public_parameters() -> PublicParameters:
    return PublicParameters(
        field_prime=FIELD_PRIME,
        group_p=GROUP_P,
        group_q=FIELD_PRIME,
        cofactor=COFACTOR,
        generator_tag=GENERATOR_TAG,
        prg=PRG_NAME,
        signature_scheme="ed25519",
        fixed_point_bits=16,
    )
