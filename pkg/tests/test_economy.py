from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgot import economy as econ
from pgot.codec import SCALE, FixedAmount, floor_fixed, to_fixed
from pgot.merkle import ZERO_ROOT, prove, verify
from pgot.round import price_receipt


def test_bootstrap_schedule():
    assert econ.bootstrap_subsidy(0) == to_fixed("50.0")
    assert econ.bootstrap_subsidy(500) == to_fixed("25.0")
    assert econ.bootstrap_subsidy(1000) == FixedAmount.ZERO
    pool = econ.form_pool([to_fixed("950.0")], 2000)
    assert not pool.bootstrap_active and pool.P_total == to_fixed("950.0")


def test_pool_split_of_thousand():
    pool = econ.form_pool([to_fixed("950.0")], 200, bootstrap=to_fixed("50.0"))
    alloc = econ.split_pool(pool)
    assert (alloc.P_C, alloc.P_M, alloc.P_T) == (to_fixed("700.0"), to_fixed("200.0"), to_fixed("100.0"))
    assert alloc.allocation_dust == FixedAmount.ZERO
    with pytest.raises(econ.AllocationError):
        econ.split_pool(pool, ("0.5", "0.2", "0.2"))


def test_worked_receipt_fields():
    r = price_receipt(200, [to_fixed("950.0")], to_fixed("50.0"), 10000, "0.22")
    got = (r.P_C, r.P_M, r.P_T, r.novelty_cap, r.P_nov, r.P_quality, r.fee_committee)
    assert got == ("700.0", "200.0", "100.0", "180.0", "39.6", "560.4", "28.571428")
    assert r.P_total == "1000.0" and r.bootstrap_active
    assert to_fixed(r.fee_committee).raw == 1872457
    assert to_fixed(r.payout_dust_committee).raw == 1


def test_ema_value():
    pool = econ.form_pool([to_fixed("100.0")], 1, prev_ema=to_fixed("200.0"))
    assert pool.ema_value == to_fixed("170.0")


def test_novelty_gate():
    assert econ.novelty_factor(1e-12, Fraction(1, 2)) == 0
    assert econ.novelty_factor(0.3, Fraction(1, 2)) == Fraction(1, 2)
    assert econ.phi_decimal(0.2199999999999) == Fraction(219999999, 10**9)
    assert econ.render_exact(econ.phi_decimal(0.5)) == "0.5"


def test_insolvency():
    with pytest.raises(econ.InsolvencyError):
        econ.reward_pools(to_fixed("1.0"), 200, "0.01", "0.3", Fraction(1, 2))


def test_fees_and_dust():
    fee, dust = econ.committee_fees(to_fixed("200.0"), 7)
    assert fee.raw * 7 + dust.raw == to_fixed("200.0").raw
    with pytest.raises(econ.NoFeesError):
        econ.committee_fees(to_fixed("200.0"), 7, accepted=False)


def test_reputation_bounds():
    rho = Fraction(1)
    for _ in range(10):
        rho = econ.update_reputation(rho, True)
    assert rho == Fraction(6, 5)
    for _ in range(10):
        rho = econ.update_reputation(rho, True, high_variance=True)
    assert rho == Fraction(4, 5)


@pytest.mark.parametrize("fault, share", [("InvalidProof", "0.3"), ("SelectiveReconstruction", "0.2"), ("LivenessFailure", "0.1")])
def test_slashing_fractions(fault, share):
    event, rest = econ.slash(to_fixed("100.0"), fault, b"n")
    assert event.amount == floor_fixed(Fraction(share) * 100)
    assert event.amount + rest == to_fixed("100.0")


def test_refunds():
    esc = [(b"b" * 4, to_fixed("1.5")), (b"a" * 4, to_fixed("2.0")), (b"b" * 4, to_fixed("0.5"))]
    r = econ.refunds(esc, to_fixed("50.0"))
    assert [econ.parse_payout_leaf(l) for l in r.leaves] == [(b"a" * 4, to_fixed("2.0")), (b"b" * 4, to_fixed("2.0"))]
    assert r.bootstrap_reclaimed == to_fixed("50.0")
    assert econ.refunds([]).refund_root == ZERO_ROOT


def test_payout_tree_inclusion():
    t = econ.build_payout_tree([(bytes([i]) * 32, FixedAmount(i + 1)) for i in range(5)])
    i = t.index_of(bytes([3]) * 32)
    assert verify(t.root, t.leaves[i], prove(t.tree, i))


config = st.fixed_dictionaries(
    {
        "escrows": st.lists(st.integers(0, 10**4 * SCALE), min_size=0, max_size=6),
        "bootstrap": st.integers(0, 50 * SCALE),
        "n": st.integers(1, 60),
        "phi": st.fractions(0, 1, max_denominator=10**9),
        "beta": st.sampled_from(["0.0", "0.3", "0.5", "1.0"]),
        "rhos": st.lists(st.sampled_from([Fraction(4, 5), Fraction(17, 20), Fraction(1), Fraction(23, 20), Fraction(6, 5)]), min_size=60, max_size=60),
        "weights": st.lists(st.integers(1, SCALE), min_size=60, max_size=60),
        "m": st.integers(1, 9),
    }
)


def settle(c):
    """Run the money path for one configuration; return None when insolvent."""
    pool = econ.form_pool([FixedAmount(e) for e in c["escrows"]], 1, bootstrap=FixedAmount(c["bootstrap"]))
    alloc = econ.split_pool(pool)
    pids = [bytes([i]) * 8 for i in range(c["n"])]
    try:
        s = econ.contributor_rewards(
            alloc.P_C, "0.01", c["beta"], c["phi"],
            {p: c["rhos"][i] for i, p in enumerate(pids)},
            econ.weight_shares({p: FixedAmount(c["weights"][i]) for i, p in enumerate(pids)}),
        )
    except econ.InsolvencyError:
        return None
    fee, dust = econ.committee_fees(alloc.P_M, c["m"])
    return pool, alloc, s, fee, dust


@given(config)
def test_conservation(c):
    out = settle(c)
    if out is None:
        return
    pool, alloc, s, fee, dust = out
    paid = sum(r.total.raw for r in s.rewards)
    assert paid + s.dust.raw == alloc.P_C.raw
    assert fee.raw * c["m"] + dust.raw == alloc.P_M.raw
    assert alloc.P_C.raw + alloc.P_M.raw + alloc.P_T.raw + alloc.allocation_dust.raw == pool.P_total.raw
    assert sum(r.r_nov.raw for r in s.rewards) <= s.pools.P_nov.raw
