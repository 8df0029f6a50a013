from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgot.aggregation import ConsensusError
from pgot.codec import cid_of, to_fixed
from pgot.crypto import SigningKey
from pgot.ledger import (
    AuthError,
    ContributorRegistry,
    Ledger,
    SharedKind,
    round_gas_report,
    sign_owned,
    sign_shared,
)

KEYS = [SigningKey.from_seed(b"k%d" % i) for i in range(6)]
COMMITTEE = [SigningKey.from_seed(b"m%d" % i) for i in range(7)]


def fresh():
    ledger = Ledger()
    for k in KEYS:
        ledger.register(ContributorRegistry(k.public, stake=to_fixed("20.0")))
    return ledger


def write(ledger, k, changes):
    reg = ledger.registries[k.public]
    return ledger.owned_write(k.public, changes, sign_owned(k, reg, changes))


def test_gas_figures():
    g = round_gas_report(10000, 4)
    assert g.gas_units == 27 and g.dollars == Fraction(27, 1000)
    assert round_gas_report(0, 4).gas_units == 2
    assert round_gas_report(1, 0).per_contributor(1) == Fraction(25, 10**7)


def test_owned_write_requires_owner():
    ledger = fresh()
    reg = write(ledger, KEYS[0], {"reputation": Fraction(21, 20)})
    assert reg.version == 1 and reg.reputation == Fraction(21, 20)
    bad = sign_owned(KEYS[1], ledger.registries[KEYS[0].public], {"rounds_charged": 9})
    with pytest.raises(AuthError):
        ledger.owned_write(KEYS[0].public, {"rounds_charged": 9}, bad)
    # a signature for an old version cannot be replayed
    old = sign_owned(KEYS[0], ContributorRegistry(KEYS[0].public), {"rounds_charged": 1})
    with pytest.raises(AuthError):
        ledger.owned_write(KEYS[0].public, {"rounds_charged": 1}, old)
    with pytest.raises(ValueError):
        write(ledger, KEYS[0], {"pid": b"x"})


def test_shared_write_needs_quorum():
    ledger = fresh()
    obj = ledger.shared[SharedKind.MODEL_REGISTRY.value]
    payload = cid_of("model-1")
    members = [k.public for k in COMMITTEE]
    with pytest.raises(ConsensusError):
        ledger.shared_write(SharedKind.MODEL_REGISTRY, payload, sign_shared(COMMITTEE[:4], obj, payload), members)
    outsiders = sign_shared([SigningKey.from_seed(b"x%d" % i) for i in range(5)], obj, payload)
    with pytest.raises(ConsensusError):
        ledger.shared_write(SharedKind.MODEL_REGISTRY, payload, outsiders, members)
    new = ledger.shared_write(SharedKind.MODEL_REGISTRY, payload, sign_shared(COMMITTEE[:5], obj, payload), members)
    assert new.version == 1 and new.lineage == (payload,)
    assert ledger.gas.shared_updates == 1


ops = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3)), max_size=30)


@given(ops, st.integers(0, 2**32))
def test_replay_and_parallel_equivalence(plan, seed):
    rng = random.Random(seed)
    a = fresh()
    per_owner = {}
    for who, n in plan:
        changes = {"rounds_charged": a.registries[KEYS[who].public].rounds_charged + n + 1}
        write(a, KEYS[who], changes)
        per_owner.setdefault(who, []).append(a.events[-1])
    # event log reproduces the state byte for byte
    b = Ledger.replay(a.events)
    assert b.log_bytes() == a.log_bytes()
    assert b.state() == a.state()
    # owned objects commute: any interleaving that keeps each owner's order agrees
    queues = {w: list(evs) for w, evs in per_owner.items()}
    c = fresh()
    while queues:
        w = rng.choice(sorted(queues))
        ev = queues[w].pop(0)
        c.owned_write(ev.pid, ev.changes, ev.signature)
        if not queues[w]:
            del queues[w]
    assert c.state() == a.state()


def test_log_file_roundtrip(tmp_path):
    ledger = fresh()
    write(ledger, KEYS[2], {"epsilon_spent": 1.5})
    path = tmp_path / "ledger.log"
    ledger.save_log(path)
    assert Ledger.load_log(path).state() == ledger.state()


@pytest.mark.parametrize("n", [10, 100, 1000, 10000])
def test_gas_linear_in_n(n):
    assert round_gas_report(n, 4).gas_units - round_gas_report(0, 4).gas_units == Fraction(25, 10000) * n
