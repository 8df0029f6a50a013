from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgot.crypto import (
    FIELD_PRIME,
    GROUP_P,
    Commitment,
    DuplicateShareError,
    InsufficientSharesError,
    MaskSeed,
    PedersenParams,
    SigningKey,
    ThresholdError,
    byzantine_bound,
    combine,
    commit,
    committee_threshold,
    dequantize,
    expand_mask,
    pairwise_mask,
    quantize,
    shamir_reconstruct,
    shamir_split,
    verify_signature,
)

q = FIELD_PRIME


def lagrange_at_zero(points):
    """Reference interpolation with Python ints and Fermat inverses."""
    total = 0
    for j, (xj, yj) in enumerate(points):
        num = den = 1
        for m, (xm, _) in enumerate(points):
            if m != j:
                num = num * (-xm) % q
                den = den * (xj - xm) % q
        total = (total + yj * num * pow(den, q - 2, q)) % q
    return total


def test_field_and_group_are_prime_and_linked():
    import gmpy2

    assert gmpy2.is_prime(q, 50)
    assert gmpy2.is_prime(GROUP_P, 25)
    assert (GROUP_P - 1) % q == 0


@given(st.integers(0, q - 1), st.integers(1, 7), st.data())
def test_shamir_against_lagrange_oracle(secret, t, data):
    n = data.draw(st.integers(t, 9))
    shares = shamir_split(secret.to_bytes(32, "big"), t, n, rng=random.Random(data.draw(st.integers())))
    subset = data.draw(st.permutations(shares)).__getitem__(slice(0, t))
    assert lagrange_at_zero([(s.x, s.y) for s in subset]) == secret
    assert int.from_bytes(shamir_reconstruct(list(subset)), "big") == secret


def test_shamir_errors():
    s = (5).to_bytes(32, "big")
    with pytest.raises(ThresholdError):
        shamir_split(s, 5, 4)
    with pytest.raises(ThresholdError):
        shamir_split(s, 0, 4)
    shares = shamir_split(s, 3, 5, rng=random.Random(1))
    with pytest.raises(InsufficientSharesError):
        shamir_reconstruct(shares[:2])
    with pytest.raises(DuplicateShareError):
        shamir_reconstruct([shares[0], shares[0], shares[1]])
    with pytest.raises(ValueError):
        shamir_split(q.to_bytes(32, "big"), 2, 3)


def test_committee_parameters():
    assert committee_threshold(7) == 4
    assert byzantine_bound(7) == 2
    assert 2 * byzantine_bound(7) + 1 == 5


def test_mask_expansion_is_deterministic_and_in_field():
    seed = (123).to_bytes(32, "big")
    m = expand_mask(seed, 33)
    assert len(m) == 33 and all(0 <= int(v) < q for v in m)
    assert list(m) == list(expand_mask(seed, 40)[:33])


@given(st.integers(2, 8), st.integers(1, 16), st.integers(0, 2**32))
def test_pairwise_masks_cancel(n, dim, s):
    rng = random.Random(s)
    ids = [bytes([i]) * 32 for i in range(n)]
    seeds = {p: [] for p in ids}
    for i in range(n):
        for j in range(i + 1, n):
            ms = MaskSeed(ids[i], ids[j], rng.randrange(q).to_bytes(32, "big"))
            seeds[ids[i]].append(ms)
            seeds[ids[j]].append(ms)
    total = sum(pairwise_mask(p, seeds[p], dim) for p in ids) % q
    assert all(int(v) == 0 for v in total)


def test_quantize_roundtrip():
    x = np.array([-1.5, 0.0, 2.25, -0.0000152587890625])
    assert np.array_equal(dequantize(quantize(x)), x)


def test_pedersen_homomorphic():
    rng = random.Random(0)
    a = [rng.randrange(q) for _ in range(6)]
    b = [rng.randrange(q) for _ in range(6)]
    ra, rb = rng.randrange(q), rng.randrange(q)
    lhs = combine([commit(a, ra), commit(b, rb)])
    rhs = commit([(x + y) % q for x, y in zip(a, b)], (ra + rb) % q)
    assert lhs == rhs
    assert lhs.is_valid()
    assert Commitment.from_bytes(lhs.to_bytes()) == lhs


def test_pedersen_binding_over_toy_domain():
    # exhaustive over 2^16 one-coordinate messages with a fixed blinding: no collisions
    params = PedersenParams(max_dim=1)
    g = int(params.generators(1)[0])
    base = int(commit([0], 7, params).point)
    seen = set()
    acc = base
    for _ in range(1 << 16):
        assert acc not in seen
        seen.add(acc)
        acc = acc * g % GROUP_P
    assert int(commit([(1 << 16) - 1], 7, params).point) == acc * pow(g, -1, GROUP_P) % GROUP_P


def test_commitment_validity_rejects_non_subgroup():
    assert not Commitment(2).is_valid() or pow(2, q, GROUP_P) == 1
    assert not Commitment(0).is_valid()
    assert not Commitment(GROUP_P).is_valid()


def test_signatures():
    k = SigningKey.from_seed(b"node")
    sig = k.sign(b"msg")
    assert verify_signature(k.public, sig, b"msg")
    assert not verify_signature(k.public, sig, b"msg2")
    assert not verify_signature(SigningKey.from_seed(b"other").public, sig, b"msg")
    assert not verify_signature(k.public, bytes(64), b"msg")
    assert SigningKey.from_seed(b"node").public == k.public
