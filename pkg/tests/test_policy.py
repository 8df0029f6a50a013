from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgot.codec import cid_of, to_fixed
from pgot.crypto import SigningKey
from pgot.policy import (
    GenesisError,
    Governance,
    HaltLimitError,
    LockPeriodError,
    Phase,
    PolicyLog,
    PolicyValidationError,
    QuorumError,
    RevertError,
    Approvals,
    Vote,
    active_policy_oracle,
    default_bundle,
    phase_for_round,
    sign_approvals,
    vote_weight,
)

KEYS = [SigningKey.from_seed(b"ms%d" % i) for i in range(5)]
COUNCIL = [SigningKey.from_seed(b"co%d" % i) for i in range(5)]


def gov_log():
    gov = Governance(tuple(k.public for k in KEYS), tuple(k.public for k in COUNCIL), to_fixed("1000.0"))
    log = PolicyLog(gov)
    log.install_genesis(default_bundle())
    return log


def variant(beta="0.4", t_lock=5, **kw):
    b = default_bundle(**kw)
    return replace(b, novelty_econ=replace(b.novelty_econ, beta=beta), timelock=replace(b.timelock, T_lock=t_lock))


def test_policy_cid_ignores_schedule():
    b = variant()
    assert b.sealed(3, 8).policy_cid == b.policy_cid == b.sealed(10, 30).policy_cid
    assert variant("0.5").policy_cid != b.policy_cid


def test_phases():
    assert phase_for_round(0) == Phase.PHASE0
    assert phase_for_round(500) == Phase.PHASE1
    assert phase_for_round(2000) == Phase.PHASE2
    assert [p.t_lock_min for p in Phase] == [5, 10, 20]


@pytest.mark.parametrize("phase, t_lock", [(Phase.PHASE0, 5), (Phase.PHASE1, 10), (Phase.PHASE2, 20)])
def test_early_activation_rejected_in_every_phase(phase, t_lock):
    log = gov_log()
    with pytest.raises(LockPeriodError):
        log.propose(variant(t_lock=t_lock), 10, requested_activation=10 + t_lock - 1, phase=phase)
    with pytest.raises(LockPeriodError):
        log.propose(variant(t_lock=t_lock - 1), 10, phase=phase)
    rec = log.propose(variant(t_lock=t_lock), 10, requested_activation=10 + t_lock, phase=phase)
    assert rec.activation_round - rec.propose_round >= t_lock


def test_multisig_activation_and_history():
    log = gov_log()
    genesis = log.active_policy_at(0)
    p = log.propose(variant(), 2)
    with pytest.raises(RevertError):
        log.activate(p, 6, sign_approvals(KEYS[:3], p))
    with pytest.raises(QuorumError):
        log.activate(p, 7, sign_approvals(KEYS[:2], p))
    with pytest.raises(QuorumError):
        log.activate(p, 7, sign_approvals(COUNCIL[:3], p))
    log.activate(p, 7, sign_approvals(KEYS[1:4], p))
    assert log.active_policy_at(6) == genesis
    assert log.active_policy_at(7) == p.policy_cid
    assert log.active_policy_at(10**6) == p.policy_cid


def test_council_and_stake_votes():
    log = gov_log()
    p1 = log.propose(variant(t_lock=10), 600)
    with pytest.raises(QuorumError):
        log.activate(p1, 610, sign_approvals(COUNCIL[:2], p1))
    log.activate(p1, 610, sign_approvals(COUNCIL[:3], p1))

    p2 = log.propose(variant("0.2", t_lock=20), 2100)
    low = Approvals(votes=(Vote(b"a", to_fixed("100.0"), True),))
    with pytest.raises(QuorumError):
        log.activate(p2, 2120, low)
    votes = (Vote(b"a", to_fixed("100.0"), True), Vote(b"b", to_fixed("100.0"), True), Vote(b"c", to_fixed("400.0"), False))
    # quadratic weights 10 + 10 vs 20: a tie is not a majority
    with pytest.raises(QuorumError):
        log.activate(p2, 2120, Approvals(votes=votes))
    votes += (Vote(b"d", to_fixed("1.0"), True),)
    log.activate(p2, 2120, Approvals(votes=votes))
    assert vote_weight(to_fixed("400.0")) == 20


def test_constitutional_change_needs_supermajority():
    log = gov_log()
    b = default_bundle()
    cons = replace(b, novelty_econ=replace(b.novelty_econ, alpha_C="0.60", alpha_M="0.30"),
                   timelock=replace(b.timelock, T_lock=20))
    p = log.propose(cons, 2100)
    assert p.constitutional
    votes = (Vote(b"a", to_fixed("900.0"), True), Vote(b"b", to_fixed("400.0"), False))  # 30 vs 20 = 60%
    with pytest.raises(QuorumError):
        log.activate(p, 2120, Approvals(votes=votes))
    votes = (Vote(b"a", to_fixed("1600.0"), True), Vote(b"b", to_fixed("400.0"), False))  # 40 vs 20
    log.activate(p, 2120, Approvals(votes=votes))


def test_finalized_rounds_cannot_change():
    log = gov_log()
    p = log.propose(variant(), 2)
    log.finalize(9)
    with pytest.raises(RevertError):
        log.activate(p, 9, sign_approvals(KEYS[:3], p))
    log.activate(p, 10, sign_approvals(KEYS[:3], p))


def test_genesis_and_validation():
    log = PolicyLog()
    with pytest.raises(GenesisError):
        log.active_policy_at(0)
    log.install_genesis(default_bundle())
    with pytest.raises(RevertError):
        log.install_genesis(default_bundle())
    b = default_bundle()
    with pytest.raises(PolicyValidationError):
        replace(b, novelty_econ=replace(b.novelty_econ, alpha_T="0.2")).validate()


def test_halts():
    log = gov_log()
    just = cid_of("incident")
    log.halt(None, 5, just, duration=3)
    assert log.halted(7) is not None and log.halted(8) is None
    with pytest.raises(HaltLimitError):
        log.halt(None, 6, just)
    with pytest.raises(HaltLimitError):
        log.halt(2, 6, just, duration=37)
    log.halt(2, 6, just, duration=2)
    assert log.halted(6, cohort=2) is not None
    assert log.halted(6, cohort=1) is not None  # global halt still covers round 6
    assert log.halted(7, cohort=1) is not None and log.halted(8, cohort=2) is None
    assert len(log.state().halts) == 2


def test_state_roundtrip():
    from pgot.codec import canonical_bytes, decode

    log = gov_log()
    p = log.propose(variant(), 2)
    log.activate(p, 7, sign_approvals(KEYS[:3], p))
    state = decode(canonical_bytes(log.state()))
    again = PolicyLog.from_state(state)
    assert again.active_policy_at(8) == log.active_policy_at(8)


@given(st.integers(0, 2**32))
def test_active_policy_matches_linear_scan(seed):
    rng = random.Random(seed)
    log = gov_log()
    history = {}
    r = 0
    for _ in range(rng.randint(1, 8)):
        r += rng.randint(0, 6)
        t_lock = 5
        req = None if rng.random() < 0.5 else r + rng.randint(0, 12)
        try:
            p = log.propose(variant(str(rng.randint(1, 99) / 100), t_lock), r, requested_activation=req)
        except LockPeriodError:
            assert req is not None and req < r + t_lock
            continue
        at = p.activation_round + rng.randint(-2, 4)
        try:
            log.activate(p, at, sign_approvals(KEYS[:3], p))
        except RevertError:
            assert at < p.activation_round or at <= log.finalized_round or at < log.activations[-1].effective_round
            continue
        # every round already answered keeps its answer
        for q, cid in history.items():
            if q < at:
                assert log.active_policy_at(q) == cid
        for q in range(0, at + 5):
            history[q] = log.active_policy_at(q)
            assert history[q] == active_policy_oracle(log.activations, q)
        log.finalize(at)
