"""Adversarial tampering of published round artifacts.

Each mutation rewrites one fact, re-stores every artifact it touches and
points a fresh receipt at the new cids, so hashes stay consistent and only
the auditor's semantic checks can catch it. Used for soundness fuzzing.
"""

from __future__ import annotations

import random
from dataclasses import replace
from enum import Enum
from typing import Callable, Mapping

from . import economy as econ
from .aggregation import NodeCommitment, RobustMethod, commitment_message, dropout_set_commitment, weight_leaf
from .codec import Cid, FixedAmount, cid_of, to_fixed
from .crypto import FIELD_PRIME, Commitment, SigningKey, combine, commit
from .merkle import merkle_root
from .round import money
from .store import ContentStore


class Mutation(str, Enum):
    NODE_SUM = "node_sum"
    SIGNATURE = "signature"
    DROPOUT_SET = "dropout_set"
    METHOD_ENUM = "method_enum"
    WEIGHTS_ROOT = "weights_root"
    PAYOUT_LEAF = "payout_leaf"
    DUST = "dust"
    POLICY_CID = "policy_cid"


def _swap_proof(store: ContentStore, receipt, proof, **receipt_changes) -> Cid:
    return store.put(replace(receipt, proof_cid=store.put(proof), **receipt_changes))


def _node_sum(store, receipt, rng, keys):
    """Substitute one node's commitment with a commitment to a shifted sum, validly signed."""
    proof = store.get(receipt.proof_cid)
    i = rng.randrange(len(proof.node_commitments))
    nc = proof.node_commitments[i]
    bump = [0] * len(store.get(receipt.aggregate_cid).field_sum)
    bump[rng.randrange(len(bump))] = rng.randrange(1, FIELD_PRIME)
    fake = commit(bump, rng.randrange(FIELD_PRIME))
    forged = combine([Commitment.from_bytes(nc.commitment), fake])
    signature = keys[nc.node].sign(commitment_message(proof.round_id, forged)) if nc.node in keys else nc.signature
    ncs = list(proof.node_commitments)
    ncs[i] = NodeCommitment(nc.node, forged.to_bytes(), signature)
    total = combine([Commitment.from_bytes(c.commitment) for c in ncs]).to_bytes()
    proof = replace(proof, node_commitments=tuple(ncs), combined_commitment=total)
    return _swap_proof(store, receipt, proof, aggregate_commitment=total)


def _signature(store, receipt, rng, keys):
    proof = store.get(receipt.proof_cid)
    i = rng.randrange(len(proof.node_commitments))
    nc = proof.node_commitments[i]
    sig = bytearray(nc.signature)
    sig[rng.randrange(len(sig))] ^= 1 << rng.randrange(8)
    ncs = list(proof.node_commitments)
    ncs[i] = replace(nc, signature=bytes(sig))
    return _swap_proof(store, receipt, replace(proof, node_commitments=tuple(ncs)))


def _dropout_set(store, receipt, rng, keys):
    proof = store.get(receipt.proof_cid)
    subs = store.get(receipt.submissions_cid)
    nodes = {nc.node for nc in proof.node_commitments}
    dropped = [e.pid for e in subs.entries if e.node in nodes and e.masked_cid is None]
    present = [e.pid for e in subs.entries if e.node in nodes and e.masked_cid is not None]
    if dropped and rng.random() < 0.5:
        dropped.pop(rng.randrange(len(dropped)))
    else:
        dropped.append(rng.choice(present))
    return _swap_proof(store, receipt, replace(proof, reconstructed_set_commitment=dropout_set_commitment(dropped)))


def _method_enum(store, receipt, rng, keys):
    proof = store.get(receipt.proof_cid)
    others = [m.value for m in RobustMethod if m.value != proof.robust_method_applied]
    method = rng.choice(others)
    agg = store.get(receipt.aggregate_cid)
    agg_cid = store.put(replace(agg, method=method))
    return _swap_proof(store, receipt, replace(proof, robust_method_applied=method), aggregate_cid=agg_cid)


def _weights_root(store, receipt, rng, keys):
    proof = store.get(receipt.proof_cid)
    subs = store.get(receipt.submissions_cid)
    nodes = {nc.node for nc in proof.node_commitments}
    live = sorted((e for e in subs.entries if e.node in nodes and e.masked_cid is not None), key=lambda e: e.pid)
    j = rng.randrange(len(live))
    leaves = [
        weight_leaf(e.pid, FixedAmount(e.weight.raw + 1) if k == j else e.weight) for k, e in enumerate(live)
    ]
    return _swap_proof(store, receipt, replace(proof, weights_root=merkle_root(leaves)))


def _payout_leaf(store, receipt, rng, keys):
    """Inflate one contributor leaf by one unit and republish a matching root."""
    settlement = store.get(receipt.settlement_cid)
    leaves = list(settlement.contributor_leaves)
    i = rng.randrange(len(leaves))
    pid, amount = econ.parse_payout_leaf(leaves[i])
    leaves[i] = econ.payout_leaf(pid, FixedAmount(amount.raw + 1))
    tree = econ.build_payout_tree([econ.parse_payout_leaf(l) for l in leaves])
    s_cid = store.put(replace(settlement, contributor_leaves=tree.leaves))
    return store.put(replace(receipt, settlement_cid=s_cid, payout_root_contributors=tree.root))


def _dust(store, receipt, rng, keys):
    field = rng.choice(["payout_dust_contributors", "payout_dust_committee"])
    raw = to_fixed(getattr(receipt, field)).raw
    delta = rng.choice([1, 2, 65536])
    new = FixedAmount(raw + delta if raw < delta or rng.random() < 0.5 else raw - delta)
    return store.put(replace(receipt, **{field: money(new)}))


def _policy_cid(store, receipt, rng, keys):
    proof = store.get(receipt.proof_cid)
    other = cid_of(("foreign-policy", rng.getrandbits(64)))
    return _swap_proof(store, receipt, replace(proof, policy_cid=other), policy_cid=other)


MUTATORS: Mapping[Mutation, Callable] = {
    Mutation.NODE_SUM: _node_sum,
    Mutation.SIGNATURE: _signature,
    Mutation.DROPOUT_SET: _dropout_set,
    Mutation.METHOD_ENUM: _method_enum,
    Mutation.WEIGHTS_ROOT: _weights_root,
    Mutation.PAYOUT_LEAF: _payout_leaf,
    Mutation.DUST: _dust,
    Mutation.POLICY_CID: _policy_cid,
}


def mutate(
    store: ContentStore,
    receipt_cid: Cid,
    kind: Mutation | str,
    rng: random.Random | None = None,
    keys: Mapping[bytes, SigningKey] | None = None,
) -> Cid:
    """Return the cid of a tampered copy of an Accepted receipt."""
    receipt = store.get(receipt_cid)
    if receipt.round_status != "Accepted":
        raise ValueError("only Accepted receipts carry the artifacts these mutations target")
    return MUTATORS[Mutation(kind)](store, receipt, rng or random.Random(0), dict(keys or {}))
