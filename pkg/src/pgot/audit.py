"""Independent receipt verification from public artifacts and the policy log.

Nothing here touches blindings of individual nodes, pairwise seeds or
plaintext updates: the only inputs are the content store, a receipt cid and
the public policy log.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from . import economy as econ
from .aggregation import RobustMethod, dropout_set_commitment, weight_leaf
from .codec import Cid, FixedAmount, schema, to_fixed
from .crypto import Commitment, byzantine_bound, combine, commit, verify_signature
from .aggregation import commitment_message
from .merkle import ZERO_ROOT, build_tree, merkle_root, prove, verify
from .policy import PolicyLog, PolicyLogState, active_policy_oracle, phase_for_round
from .store import ContentStore, MissingArtifact

DEFAULT_SAMPLE = 100


class AvailabilityError(LookupError):
    """A referenced artifact could not be fetched (distinct from a failed check)."""


@schema("AuditCheck")
@dataclass(frozen=True)
class AuditCheck:
    name: str
    passed: bool
    detail: str = ""


@schema("AuditReport")
@dataclass(frozen=True)
class AuditReport:
    receipt_cid: Cid | None
    checks: tuple
    verdict: bool

    def failed(self) -> list[AuditCheck]:
        return [c for c in self.checks if not c.passed]

    def text(self) -> str:
        lines = [f"receipt {self.receipt_cid}: {'PASS' if self.verdict else 'FAIL'}"]
        for c in self.checks:
            mark = "ok  " if c.passed else "FAIL"
            lines.append(f"  [{mark}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines) + "\n"


@dataclass
class _Checks:
    items: list[AuditCheck] = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> bool:
        self.items.append(AuditCheck(name, bool(ok), "" if ok else detail))
        return bool(ok)

    def report(self, cid: Cid | None) -> AuditReport:
        return AuditReport(cid, tuple(self.items), all(c.passed for c in self.items))


def _fetch(store: ContentStore, cid: Cid | None, what: str):
    if cid is None:
        raise AvailabilityError(f"{what} is not referenced")
    try:
        return store.get(cid)
    except MissingArtifact as exc:
        raise AvailabilityError(f"{what} {cid} unavailable") from exc


def _amount(text: str) -> FixedAmount:
    return to_fixed(text)


def _state(policy: PolicyLog | PolicyLogState) -> PolicyLogState:
    return policy.state() if isinstance(policy, PolicyLog) else policy


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def verify_receipt(
    receipt_cid: Cid,
    store: ContentStore,
    policy: PolicyLog | PolicyLogState,
    sample_k: int = DEFAULT_SAMPLE,
    rng: random.Random | None = None,
) -> AuditReport:
    receipt = _fetch(store, receipt_cid, "receipt")
    state = _state(policy)
    checks = _Checks()
    _policy_checks(checks, receipt, state)
    if receipt.round_status == "Failed":
        escrows = _fetch(store, receipt.escrow_cid, "escrow log")
        refund = _fetch(store, receipt.refunds_cid, "refund set")
        checks.items.extend(verify_failed_round(receipt, escrows, refund).checks)
        return checks.report(receipt_cid)

    proof = _fetch(store, receipt.proof_cid, "proof")
    aggregate = _fetch(store, receipt.aggregate_cid, "aggregate")
    submissions = _fetch(store, receipt.submissions_cid, "submissions")
    settlement = _fetch(store, receipt.settlement_cid, "settlement")
    escrows = _fetch(store, receipt.escrow_cid, "escrow log")
    bundle = next((b for b in state.bundles if b.policy_cid == proof.policy_cid), None)

    checks.add("proof.binding", proof.round_id == receipt.round_id and proof.policy_cid == receipt.policy_cid,
               "proof round or policy differs from receipt")

    # step 1-2: node commitments, signatures, validity, quorum
    committee = set(receipt.committee)
    nodes = [nc.node for nc in proof.node_commitments]
    sig_ok = all(
        nc.node in committee
        and verify_signature(nc.node, nc.signature, commitment_message(proof.round_id, Commitment.from_bytes(nc.commitment)))
        for nc in proof.node_commitments
    )
    checks.add("step2.signatures", sig_ok, "a node signature does not verify")
    valid = all(Commitment.from_bytes(nc.commitment).is_valid() for nc in proof.node_commitments)
    checks.add("step2.commitment_validity", valid, "a commitment is outside the prime-order subgroup")
    quorum = 2 * byzantine_bound(len(receipt.committee)) + 1
    checks.add("step2.quorum", len(set(nodes)) == len(nodes) and len(nodes) >= quorum,
               f"{len(set(nodes))} distinct signers, need {quorum}")

    # step 3: homomorphic combination and opening of the published aggregate
    combined = combine([Commitment.from_bytes(nc.commitment) for nc in proof.node_commitments]) if nodes else None
    ok3 = combined is not None and combined.to_bytes() == proof.combined_commitment == receipt.aggregate_commitment
    checks.add("step3.combine", ok3, "product of node commitments does not match the combined commitment")
    opened = commit(aggregate.field_sum, aggregate.blinding_sum)
    checks.add("step3.opening", combined is not None and opened == combined,
               "published aggregate does not open the combined commitment")

    # step 4: dropout set recomputed from the public submission record
    included_nodes = set(nodes)
    dropped = [e.pid for e in submissions.entries if e.node in included_nodes and e.masked_cid is None]
    checks.add("step4.dropout_set", dropout_set_commitment(dropped) == proof.reconstructed_set_commitment,
               "reconstructed-set commitment does not match the recorded dropouts")
    checks.add("step4.included_nodes", tuple(sorted(included_nodes)) == tuple(submissions.included_nodes),
               "submission record names different nodes")

    # weights: root and policy bounds
    included = sorted((e for e in submissions.entries if e.node in included_nodes and e.masked_cid is not None),
                      key=lambda e: e.pid)
    root = merkle_root([weight_leaf(e.pid, e.weight) for e in included])
    checks.add("weights.root", root == proof.weights_root, "weights_root mismatch")
    if bundle is not None:
        lo, hi = bundle.aggregation.w_min, bundle.aggregation.w_max
        checks.add("weights.bounds", all(lo <= e.weight <= hi for e in included), "a weight is outside policy bounds")
    checks.add("weights.total", sum(e.weight.raw for e in included) == aggregate.total_weight,
               "aggregate total weight differs from submissions")
    checks.add("receipt.N_admitted", receipt.N_admitted == len(included), "N_admitted differs from included set")

    # step 5: robust method against the bound policy
    checks.add("step5.method", _method_ok(proof, bundle) and aggregate.method == proof.robust_method_applied,
               f"method {proof.robust_method_applied!r} inconsistent with policy and trigger")

    _economics(checks, receipt, escrows)
    for c in sample_payouts(receipt, settlement, included, sample_k, rng).checks:
        checks.items.append(c)
    return checks.report(receipt_cid)


def _method_ok(proof, bundle) -> bool:
    if bundle is None:
        return False
    try:
        applied = RobustMethod(proof.robust_method_applied)
        configured = RobustMethod(bundle.aggregation.robust_method)
    except ValueError:
        return False
    triggered = proof.variance_threshold is not None and proof.variance_statistic > proof.variance_threshold
    if configured == RobustMethod.NONE or not triggered:
        return applied == RobustMethod.NONE
    return applied == configured


def _policy_checks(checks: _Checks, receipt, state: PolicyLogState) -> None:
    expected = active_policy_oracle(state.activations, receipt.round_id)
    checks.add("policy.binding", expected is not None and receipt.policy_cid == expected,
               "receipt policy_cid is not the policy active at its round")
    rec = None
    for a in state.activations:
        if a.effective_round <= receipt.round_id:
            rec = a
    if rec is None:
        checks.add("policy.lock_period", False, "no activation record")
        return
    bundle = next((b for b in state.bundles if b.policy_cid == rec.policy_cid), None)
    if rec.genesis:
        checks.add("policy.lock_period", bundle is not None, "genesis bundle missing")
        return
    minimum = phase_for_round(rec.propose_round).t_lock_min
    ok = (
        bundle is not None
        and rec.activation_round - rec.propose_round >= rec.T_lock >= minimum
        and rec.effective_round >= rec.activation_round
        and bundle.timelock.T_lock == rec.T_lock
    )
    checks.add("policy.lock_period", ok,
               f"activation {rec.activation_round} - proposal {rec.propose_round} below T_lock {rec.T_lock} (min {minimum})")


def _economics(checks: _Checks, receipt, escrows) -> None:
    p_recv = FixedAmount(sum(a.raw for _, a in escrows.escrows))
    checks.add("pool.receivers", _amount(receipt.P_receivers) == p_recv, "P_receivers differs from escrow log")
    total = _amount(receipt.P_total)
    checks.add("pool.total", total == _amount(receipt.P_receivers) + _amount(receipt.P_bootstrap), "P_total mismatch")
    alloc = econ.split_pool(total, (receipt.alpha_C, receipt.alpha_M, receipt.alpha_T))
    checks.add(
        "pool.split",
        (alloc.P_C, alloc.P_M, alloc.P_T, alloc.allocation_dust)
        == tuple(_amount(x) for x in (receipt.P_C, receipt.P_M, receipt.P_T, receipt.allocation_dust)),
        "allocation does not follow the alphas",
    )
    phi = econ.novelty_factor(receipt.phi_t, econ.phi_decimal(receipt.phi_t_ema))
    pools = econ.reward_pools(alloc.P_C, receipt.N_admitted, receipt.r_base, receipt.beta, phi)
    checks.add(
        "pool.contributor_economics",
        (pools.novelty_cap, pools.P_nov, pools.P_quality)
        == tuple(_amount(x) for x in (receipt.novelty_cap, receipt.P_nov, receipt.P_quality)),
        "novelty_cap / P_nov / P_quality do not recompute",
    )
    fee, _ = econ.committee_fees(alloc.P_M, len(receipt.fee_recipients) or 1)
    checks.add("pool.fee", fee == _amount(receipt.fee_committee), "fee_committee does not recompute")


# ---------------------------------------------------------------------------
# Payout sampling
# ---------------------------------------------------------------------------


def sample_payouts(receipt, settlement, included_entries: Sequence | None = None, k: int = DEFAULT_SAMPLE,
                   rng: random.Random | None = None) -> AuditReport:
    checks = _Checks()
    lines = {ln.pid: ln for ln in settlement.rewards}
    alloc = econ.split_pool(_amount(receipt.P_total), (receipt.alpha_C, receipt.alpha_M, receipt.alpha_T))
    phi = econ.novelty_factor(receipt.phi_t, econ.phi_decimal(receipt.phi_t_ema))
    if included_entries is not None:
        published = {e.pid: e.weight for e in included_entries}
        checks.add("payout.population", published == {p: ln.weight for p, ln in lines.items()},
                   "reward lines do not match the included submissions")
    expected = econ.contributor_rewards(
        alloc.P_C,
        receipt.r_base,
        receipt.beta,
        phi,
        {p: ln.rho for p, ln in lines.items()},
        econ.weight_shares({p: ln.weight for p, ln in lines.items()}),
    )
    want = {r.pid: r.total for r in expected.rewards}
    leaves = list(settlement.contributor_leaves)
    if not leaves:
        checks.add("payout.tree", False, "no contributor leaves")
        return checks.report(None)
    tree = build_tree(leaves)
    checks.add("payout.root", tree.root == receipt.payout_root_contributors, "contributor payout root mismatch")
    idx = list(range(len(leaves)))
    picks = sorted((rng or random.Random(receipt.round_id)).sample(idx, min(k, len(idx))))
    bad_recompute, bad_incl = [], []
    for i in picks:
        pid, amount = econ.parse_payout_leaf(leaves[i])
        if not verify(receipt.payout_root_contributors, leaves[i], prove(tree, i)):
            bad_incl.append(i)
        if want.get(pid) != amount:
            bad_recompute.append(i)
    checks.add("payout.inclusion", not bad_incl, f"leaves {bad_incl} not included under the receipt root")
    checks.add("payout.recompute", not bad_recompute, f"PayoutFraudFinding at leaves {bad_recompute}")

    paid_c = sum(econ.parse_payout_leaf(l)[1].raw for l in leaves)
    dust_c = _amount(receipt.payout_dust_contributors)
    checks.add("conservation.contributors", paid_c + dust_c.raw == alloc.P_C.raw,
               "contributor payouts plus dust differ from P_C")
    cleaves = list(settlement.committee_leaves)
    paid_m = sum(econ.parse_payout_leaf(l)[1].raw for l in cleaves)
    dust_m = _amount(receipt.payout_dust_committee)
    checks.add("payout.committee_root", bool(cleaves) and build_tree(cleaves).root == receipt.payout_root_committee,
               "committee payout root mismatch")
    checks.add("conservation.committee", paid_m + dust_m.raw == alloc.P_M.raw, "fees plus dust differ from P_M")
    total = (
        paid_c + paid_m + alloc.P_T.raw
        + dust_c.raw + dust_m.raw + _amount(receipt.allocation_dust).raw
    )
    checks.add("conservation.total", total == _amount(receipt.P_total).raw,
               "P_total != P_C + P_M + P_T + dust")
    return checks.report(None)


# ---------------------------------------------------------------------------
# Failed rounds
# ---------------------------------------------------------------------------


def verify_failed_round(receipt, escrow_log, refund) -> AuditReport:
    checks = _Checks()
    zero = FixedAmount.ZERO
    checks.add("failed.zero_allocation",
               all(_amount(x) == zero for x in (receipt.P_C, receipt.P_M, receipt.P_T)),
               "Failed receipt allocates a nonzero share")
    owed: dict[bytes, int] = {}
    for pid, amt in escrow_log.escrows:
        owed[pid] = owed.get(pid, 0) + amt.raw
    paid = {}
    for leaf in refund.leaves:
        pid, amt = econ.parse_payout_leaf(leaf)
        paid[pid] = paid.get(pid, 0) + amt.raw
    missing = sorted(set(owed) - set(paid))
    extra = sorted(set(paid) - set(owed))
    wrong = sorted(p for p in set(owed) & set(paid) if owed[p] != paid[p])
    checks.add("refund.coverage", not (missing or extra or wrong),
               f"RefundFraudFinding: {len(missing)} missing, {len(extra)} unexpected, {len(wrong)} wrong amounts")
    root = build_tree(list(refund.leaves)).root if refund.leaves else ZERO_ROOT
    checks.add("refund.root", root == receipt.refund_root == refund.refund_root, "refund_root mismatch")
    checks.add("refund.total", sum(paid.values()) == _amount(receipt.P_receivers).raw,
               "refunds do not sum to P_receivers")
    checks.add("refund.bootstrap", _amount(receipt.bootstrap_reclaimed) == _amount(receipt.P_bootstrap),
               "bootstrap_reclaimed differs from P_bootstrap")
    return checks.report(None)
