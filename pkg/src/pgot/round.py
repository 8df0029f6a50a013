"""Round lifecycle: setup, training, aggregation, publication, settlement, receipts."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import economy as econ
from .aggregation import (
    AggregationPolicy,
    DpConfig,
    BudgetError,
    MaskedUpdate,
    NodeLocalSum,
    RobustMethod,
    WeightBounds,
    account_privacy,
    byzantine_filter,
    clip_and_noise,
    dropout_set_commitment,
    generate_proof,
    make_masked_update,
    reconstruct_dropouts,
    seal_local_sum,
    weight_leaf,
    weighted_sum,
)
from .codec import (
    FRACTION_BITS,
    HASH_FN,
    ROUNDING_MODE,
    SCALE,
    TREE_FANOUT,
    Cid,
    FixedAmount,
    format_decimal,
    round_id_bytes,
    schema,
)
from .crypto import (
    FIELD_PRIME,
    InsufficientSharesError,
    MaskSeed,
    ShamirShare,
    SigningKey,
    byzantine_bound,
    combine,
    committee_threshold,
    dequantize,
    field_zeros,
    public_parameters,
    quantize,
    shamir_split,
)
from .ledger import ContributorRegistry, Ledger, SharedKind, sign_owned, sign_shared
from .merkle import merkle_root
from .novelty import NoveltyBasis, NoveltyTracker, RotationMode, checkpoint, decompose, rotate_basis, smooth
from .policy import EnsembleRule, PolicyBundle, PolicyLog, default_bundle
from .store import ContentStore

PHASE_BUDGET_MINUTES = {"Setup": 5, "Training": 90, "Aggregation": 15, "Publication": 5}


class CommitteeError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


class TransitionError(RuntimeError):
    pass


class Phase(str, Enum):
    SETUP = "Setup"
    TRAINING = "Training"
    AGGREGATION = "Aggregation"
    PUBLICATION = "Publication"
    ACCEPTED = "Accepted"
    FAILED = "Failed"


TERMINAL = {Phase.ACCEPTED, Phase.FAILED}
EDGES = {
    Phase.SETUP: {Phase.TRAINING, Phase.FAILED},
    Phase.TRAINING: {Phase.AGGREGATION, Phase.FAILED},
    Phase.AGGREGATION: {Phase.PUBLICATION, Phase.FAILED},
    Phase.PUBLICATION: {Phase.ACCEPTED, Phase.FAILED},
    Phase.ACCEPTED: set(),
    Phase.FAILED: set(),
}


class FailureReason(str, Enum):
    AUTO_EXPIRED = "AutoExpired"
    AGGREGATION_ERROR = "AggregationError"
    CONSENSUS_ERROR = "ConsensusError"
    SAFETY_GATE = "SafetyGate"
    EVALUATION_ERROR = "EvaluationError"
    NO_CONTRIBUTORS = "NoContributors"


@dataclass
class RoundState:
    round_id: int
    policy_cid: Cid
    phase: Phase = Phase.SETUP
    failure: FailureReason | None = None
    trace: list[Phase] = field(default_factory=lambda: [Phase.SETUP])
    ticks: int = 0
    admitted: tuple[bytes, ...] = ()
    committee: tuple[bytes, ...] = ()

    def advance(self, to: Phase, reason: FailureReason | None = None) -> None:
        if to not in EDGES[self.phase]:
            raise TransitionError(f"illegal transition {self.phase.value} -> {to.value}")
        if self.phase.value in PHASE_BUDGET_MINUTES:
            self.ticks += PHASE_BUDGET_MINUTES[self.phase.value]
        self.phase = to
        self.trace.append(to)
        if to == Phase.FAILED:
            self.failure = reason

    def fail(self, reason: FailureReason) -> None:
        self.advance(Phase.FAILED, reason)


# ---------------------------------------------------------------------------
# Safety gate
# ---------------------------------------------------------------------------


def _exact(x: float) -> Fraction:
    return Fraction(repr(float(x)))


@schema("ProxyResult")
@dataclass(frozen=True)
class ProxyResult:
    name: str
    baseline: float
    candidate: float
    delta: float
    threshold: float
    passed: bool
    excess: float


@schema("SafetyEvaluation")
@dataclass(frozen=True)
class SafetyEvaluation:
    proxies: tuple
    ensemble_rule: str
    tolerance: float
    passed: bool


def safety_gate(
    candidate: Mapping[str, float],
    baseline: Mapping[str, float],
    bundle: PolicyBundle,
) -> SafetyEvaluation:
    """Compare each proxy's degradation (candidate - baseline) with its threshold."""
    tol = _exact(bundle.safety.numerical_tolerance)
    results = []
    for cfg in bundle.safety.proxy_configs:
        if cfg.name not in candidate or cfg.name not in baseline:
            raise EvaluationError(f"missing score for proxy {cfg.name!r}")
        delta = _exact(candidate[cfg.name]) - _exact(baseline[cfg.name])
        limit = _exact(cfg.threshold)
        results.append(
            ProxyResult(
                cfg.name,
                float(baseline[cfg.name]),
                float(candidate[cfg.name]),
                float(delta),
                float(cfg.threshold),
                delta <= limit + tol,
                float(max(Fraction(0), delta - limit)),
            )
        )
    rule = EnsembleRule(bundle.safety.ensemble_rule)
    if rule == EnsembleRule.ALL_PASS:
        ok = all(r.passed for r in results)
    else:
        majority = 2 * sum(r.passed for r in results) > len(results)
        hard_cap = all(
            _exact(r.candidate) - _exact(r.baseline) <= _exact(r.threshold) * Fraction(101, 100)
            for r in results
        )
        ok = majority and hard_cap
    return SafetyEvaluation(tuple(results), rule.value, float(bundle.safety.numerical_tolerance), ok)


# ---------------------------------------------------------------------------
# Admission and committee election
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    pid: bytes
    stake: FixedAmount
    attested: bool = True


@dataclass(frozen=True)
class Admission:
    admitted: tuple[bytes, ...]
    rejected: Mapping[bytes, str]


def admit(
    candidates: Sequence[Candidate],
    bundle: PolicyBundle,
    registries: Mapping[bytes, ContributorRegistry] | None = None,
    k_anonymity: int | None = None,
) -> Admission:
    """Per-candidate checks; ``k_anonymity`` overrides the bundle's cohort floor."""
    registries = registries or {}
    adm = bundle.admission
    dp = dp_config(bundle)
    ok, rejected = [], {}
    for c in sorted(candidates, key=lambda c: c.pid):
        reg = registries.get(c.pid)
        if c.stake < adm.min_stake:
            rejected[c.pid] = "InsufficientStake"
        elif adm.attestation_required and not c.attested:
            rejected[c.pid] = "AttestationMissing"
        else:
            try:
                account_privacy(dp, (reg.rounds_charged if reg else 0) + 1)
            except BudgetError:
                rejected[c.pid] = "BudgetError"
                continue
            ok.append(c.pid)
    floor = adm.k_anonymity_threshold if k_anonymity is None else k_anonymity
    if len(ok) < floor:
        for pid in ok:
            rejected[pid] = "KAnonymity"
        ok = []
    return Admission(tuple(ok), rejected)


def elect_committee(validators: Sequence[bytes], round_id: int, prior: Cid | None, size: int) -> tuple[bytes, ...]:
    """Seeded shuffle keyed on the round and the previous receipt."""
    pool = sorted(set(validators))
    if len(pool) < size:
        raise CommitteeError(f"{len(pool)} validators cannot seat a committee of {size}")
    seed = (prior.digest if prior else bytes(32)) + round_id_bytes(round_id)
    ranked = sorted(pool, key=lambda v: hashlib.sha256(seed + v).digest())
    return tuple(ranked[:size])


def dp_config(bundle: PolicyBundle) -> DpConfig:
    d = bundle.dp
    return DpConfig(d.epsilon_per_round, d.delta_global, d.clipping_norm, d.noise_scale, d.epsilon_budget)


def aggregation_policy(bundle: PolicyBundle) -> AggregationPolicy:
    a = bundle.aggregation
    return AggregationPolicy(RobustMethod(a.robust_method), a.robust_alpha, float(a.robust_theta_percentile), a.variance_window)


def weight_bounds(bundle: PolicyBundle) -> WeightBounds:
    return WeightBounds(bundle.aggregation.w_min, bundle.aggregation.w_max)


# ---------------------------------------------------------------------------
# Public artifacts
# ---------------------------------------------------------------------------


@schema("SubmissionEntry")
@dataclass(frozen=True)
class SubmissionEntry:
    pid: bytes
    cohort: int
    node: bytes
    weight: FixedAmount
    masked_cid: Cid | None


@schema("Submissions")
@dataclass(frozen=True)
class Submissions:
    round_id: int
    entries: tuple
    included_nodes: tuple


@schema("AggregateArtifact")
@dataclass(frozen=True)
class AggregateArtifact:
    round_id: int
    field_sum: tuple
    blinding_sum: int
    total_weight: int
    method: str
    update: tuple  # published model delta, 16-bit fixed point


@schema("RewardLine")
@dataclass(frozen=True)
class RewardLine:
    pid: bytes
    rho: Fraction
    weight: FixedAmount
    r_base_component: FixedAmount
    r_quality: FixedAmount
    r_nov: FixedAmount


@schema("SettlementArtifact")
@dataclass(frozen=True)
class SettlementArtifact:
    round_id: int
    rewards: tuple
    contributor_leaves: tuple
    committee_leaves: tuple
    treasury: FixedAmount


@schema("EscrowLog")
@dataclass(frozen=True)
class EscrowLog:
    round_id: int
    escrows: tuple  # (receiver id, FixedAmount)


@schema("RoundSetupRecord")
@dataclass(frozen=True)
class RoundSetupRecord:
    round_id: int
    policy_cid: Cid
    committee: tuple
    admitted: tuple


@schema("AggregateReceipt")
@dataclass(frozen=True)
class AggregateReceipt:
    receipt_id: int
    round_id: int
    round_status: str
    P_receivers: str
    P_bootstrap: str
    P_total: str
    bootstrap_active: bool
    ema_value: str
    alpha_C: str
    alpha_M: str
    alpha_T: str
    P_C: str
    P_M: str
    P_T: str
    N_admitted: int
    r_base: str
    beta: str
    phi_t_ema: str
    novelty_cap: str
    P_nov: str
    P_quality: str
    M: int
    fee_committee: str
    payout_root_contributors: bytes
    payout_root_committee: bytes
    payout_dust_contributors: str
    payout_dust_committee: str
    hash_fn: str = HASH_FN
    tree_fanout: int = TREE_FANOUT
    precision_bits: int = FRACTION_BITS
    rounding_mode: str = ROUNDING_MODE
    allocation_dust: str = "0.0"
    phi_t: float = 0.0
    proof_cid: Cid | None = None
    policy_cid: Cid | None = None
    params_cid: Cid | None = None
    aggregate_commitment: bytes = b""
    committee: tuple = ()
    fee_recipients: tuple = ()
    settlement_cid: Cid | None = None
    submissions_cid: Cid | None = None
    basis_cid: Cid | None = None
    aggregate_cid: Cid | None = None
    escrow_cid: Cid | None = None
    safety: SafetyEvaluation | None = None
    slashes: tuple = ()


@schema("FailedReceipt")
@dataclass(frozen=True)
class FailedReceipt:
    receipt_id: int
    round_id: int
    round_status: str
    failure_reason: str
    P_receivers: str
    P_bootstrap: str
    P_total: str
    bootstrap_active: bool
    ema_value: str
    P_C: str
    P_M: str
    P_T: str
    refund_root: bytes
    refund_dust: str
    bootstrap_reclaimed: str
    hash_fn: str = HASH_FN
    tree_fanout: int = TREE_FANOUT
    precision_bits: int = FRACTION_BITS
    rounding_mode: str = ROUNDING_MODE
    policy_cid: Cid | None = None
    params_cid: Cid | None = None
    committee: tuple = ()
    escrow_cid: Cid | None = None
    refunds_cid: Cid | None = None
    proof_cid: Cid | None = None
    safety: SafetyEvaluation | None = None
    slashes: tuple = ()


def money(value: Fraction | FixedAmount) -> str:
    if isinstance(value, FixedAmount):
        value = value.to_fraction()
    return format_decimal(value)


def build_accepted_receipt(
    round_id: int,
    pool: econ.RoundPool,
    alloc: econ.PoolAllocation,
    pools: econ.RewardPools,
    n_admitted: int,
    r_base: str,
    beta: str,
    phi_ema: Fraction,
    committee_size: int,
    fee_exact: Fraction,
    contributor_root: bytes,
    committee_root: bytes,
    contributor_dust: FixedAmount,
    committee_dust: FixedAmount,
    **extras,
) -> AggregateReceipt:
    """Monetary strings are rendered from exact values; each parses back to the amount moved."""
    total = pool.P_total.to_fraction()
    a_c, a_m, a_t = (econ.as_ratio(a) for a in (alloc.alpha_C, alloc.alpha_M, alloc.alpha_T))
    return AggregateReceipt(
        receipt_id=round_id,
        round_id=round_id,
        round_status=Phase.ACCEPTED.value,
        P_receivers=money(pool.P_receivers),
        P_bootstrap=money(pool.P_bootstrap),
        P_total=money(pool.P_total),
        bootstrap_active=pool.bootstrap_active,
        ema_value=money(pool.ema_value),
        alpha_C=alloc.alpha_C,
        alpha_M=alloc.alpha_M,
        alpha_T=alloc.alpha_T,
        P_C=money(total * a_c),
        P_M=money(total * a_m),
        P_T=money(total * a_t),
        N_admitted=n_admitted,
        r_base=r_base,
        beta=beta,
        phi_t_ema=econ.render_exact(phi_ema),
        novelty_cap=money(econ.as_ratio(beta) * (alloc.P_C.to_fraction() - pools.base_total)),
        P_nov=money(pools.nov_exact),
        P_quality=money(pools.quality_exact),
        M=committee_size,
        fee_committee=money(fee_exact),
        payout_root_contributors=contributor_root,
        payout_root_committee=committee_root,
        payout_dust_contributors=money(contributor_dust),
        payout_dust_committee=money(committee_dust),
        allocation_dust=money(alloc.allocation_dust),
        **extras,
    )


def price_receipt(
    round_id: int,
    receivers: Sequence[FixedAmount],
    bootstrap: FixedAmount | None,
    N: int,
    phi: Fraction | str,
    M: int = 7,
    bundle: PolicyBundle | None = None,
) -> AggregateReceipt:
    """Economics-only receipt: N equal contributors at reputation 1, all M nodes paid.

    Contributor pids are synthetic (hashes of their index); commitments and
    artifact cids are left empty.
    """
    ne = (bundle or default_bundle()).novelty_econ
    pool = econ.form_pool(list(receivers), round_id, bootstrap=bootstrap)
    alloc = econ.split_pool(pool, (ne.alpha_C, ne.alpha_M, ne.alpha_T))
    phi = econ.as_ratio(phi)
    pids = [hashlib.sha256(b"contributor" + i.to_bytes(8, "big")).digest() for i in range(N)]
    nodes = [hashlib.sha256(b"node" + j.to_bytes(8, "big")).digest() for j in range(M)]
    weight = {p: FixedAmount(SCALE) for p in pids}
    settle = econ.contributor_rewards(
        alloc.P_C, ne.r_base, ne.beta, phi, {p: Fraction(1) for p in pids}, econ.weight_shares(weight)
    )
    fee, committee_dust = econ.committee_fees(alloc.P_M, M)
    contributors = econ.build_payout_tree([(r.pid, r.total) for r in settle.rewards])
    committee = econ.build_payout_tree([(n, fee) for n in nodes])
    return build_accepted_receipt(
        round_id, pool, alloc, settle.pools, N, ne.r_base, ne.beta, phi, M,
        alloc.P_M.to_fraction() / M, contributors.root, committee.root, settle.dust, committee_dust,
        committee=tuple(nodes), fee_recipients=tuple(sorted(nodes)),
    )


# ---------------------------------------------------------------------------
# Protocol engine
# ---------------------------------------------------------------------------


def derive_seed(*parts) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else repr(p).encode())
        h.update(b"|")
    return int.from_bytes(h.digest()[:16], "big")


@dataclass
class Participant:
    key: SigningKey
    stake: FixedAmount
    attested: bool = True

    @property
    def pid(self) -> bytes:
        return self.key.public


@dataclass
class RoundInputs:
    """Everything scripted about one round. Vectors are keyed by contributor pid."""

    updates: Mapping[bytes, np.ndarray] = field(default_factory=dict)
    weights: Mapping[bytes, FixedAmount] = field(default_factory=dict)
    # pre-quantized field vectors that bypass clip+noise (replayed or crafted)
    field_updates: Mapping[bytes, np.ndarray] = field(default_factory=dict)
    dropped: frozenset = frozenset()
    node_behavior: Mapping[bytes, str] = field(default_factory=dict)
    candidate_scores: Mapping[str, float] = field(default_factory=dict)
    baseline_scores: Mapping[str, float] = field(default_factory=dict)
    escrows: Sequence[tuple[bytes, FixedAmount]] = ()
    bootstrap: FixedAmount | None = None


@dataclass
class RoundOutcome:
    round_id: int
    status: str
    receipt: AggregateReceipt | FailedReceipt
    receipt_cid: Cid
    state: RoundState
    phi: float = 0.0
    phi_ema: float = 0.0
    noised: Mapping[bytes, np.ndarray] = field(default_factory=dict)
    rewards: Mapping[bytes, econ.ContributorReward] = field(default_factory=dict)
    fees: Mapping[bytes, FixedAmount] = field(default_factory=dict)
    refunds: econ.RefundSettlement | None = None
    aggregate: np.ndarray | None = None
    g_perp: np.ndarray | None = None
    included: tuple[bytes, ...] = ()
    rejected: Mapping[bytes, str] = field(default_factory=dict)
    gas_owned: int = 0
    gas_shared: int = 0


class Protocol:
    """Mutable protocol state carried across rounds, plus the round driver."""

    def __init__(
        self,
        contributors: Sequence[Participant],
        validators: Sequence[Participant],
        policy_log: PolicyLog,
        dim: int,
        committee_size: int = 7,
        store: ContentStore | None = None,
        seed: int = 0,
        k_anonymity: int | None = 1,
        keep_masked: bool = True,
    ) -> None:
        self.contributors = {c.pid: c for c in contributors}
        self.validators = {v.pid: v for v in validators}
        self.policy_log = policy_log
        self.dim = dim
        self.committee_size = committee_size
        self.store = store if store is not None else ContentStore()
        self.seed = seed
        self.k_anonymity = k_anonymity
        self.keep_masked = keep_masked
        self.ledger = Ledger()
        for c in contributors:
            self.ledger.register(ContributorRegistry(c.pid, stake=c.stake))
        bundle = policy_log.active_bundle(0)
        ne = bundle.novelty_econ
        self.tracker = NoveltyTracker(
            NoveltyBasis.empty(dim, ne.basis_size, RotationMode(ne.basis_rotation)),
            lam=float(econ.as_ratio(ne.lambda_ema)),
        )
        self.variance_history: list[float] = []
        self.prev_receipt: Cid | None = None
        self.prev_ema = FixedAmount.ZERO
        self.params_cid = self.store.put(public_parameters())
        self.receipts: list[Cid] = []
        self.slash_log: list[econ.SlashEvent] = []
        self.treasury = FixedAmount.ZERO

    # -- helpers -------------------------------------------------------------

    def _rng(self, *tags) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.seed, *tags))

    def _pyrng(self, *tags) -> random.Random:
        return random.Random(derive_seed(self.seed, *tags))

    def _approve(self, kind: SharedKind, payload: Cid, signers: Sequence[bytes], committee: Sequence[bytes]) -> None:
        obj = self.ledger.shared[kind.value]
        keys = [self.validators[n].key for n in signers]
        self.ledger.shared_write(kind, payload, sign_shared(keys, obj, payload), committee)

    def committee_for(self, round_id: int) -> tuple[bytes, ...]:
        """Committee the next call to ``run_round(round_id)`` will use."""
        return elect_committee(list(self.validators), round_id, self.prev_receipt, self.committee_size)

    # -- main driver -----------------------------------------------------------

    def run_round(self, round_id: int, inputs: RoundInputs) -> RoundOutcome:
        owned0, shared0 = self.ledger.gas.owned_updates, self.ledger.gas.shared_updates
        log = self.policy_log
        policy_cid = log.active_policy_at(round_id)
        bundle = log.bundle(policy_cid)
        state = RoundState(round_id, policy_cid)
        M = self.committee_size
        committee = self.committee_for(round_id)
        state.committee = committee
        escrow_log = EscrowLog(round_id, tuple(sorted(inputs.escrows)))
        escrow_cid = self.store.put(escrow_log)
        pool = econ.form_pool([a for _, a in escrow_log.escrows], round_id, self.prev_ema, inputs.bootstrap)

        def finish_failed(reason: FailureReason, **extra) -> RoundOutcome:
            state.fail(reason)
            return self._fail(state, pool, escrow_log, escrow_cid, committee, reason, owned0, shared0, **extra)

        # ---- Setup
        if log.halted(round_id) is not None:
            return finish_failed(FailureReason.AUTO_EXPIRED)
        candidates = [Candidate(c.pid, c.stake, c.attested) for c in self.contributors.values()]
        adm = admit(candidates, bundle, self.ledger.registries, self.k_anonymity)
        rejected = dict(adm.rejected)
        cohort_of: dict[bytes, int] = {}
        for i, pid in enumerate(adm.admitted):
            cohort = i % M
            if log.halted(round_id, cohort) is not None:
                rejected[pid] = "CohortHalted"
            else:
                cohort_of[pid] = cohort
        admitted = tuple(p for p in adm.admitted if p in cohort_of)
        state.admitted = admitted
        setup_cid = self.store.put(RoundSetupRecord(round_id, policy_cid, committee, admitted))
        self._approve(SharedKind.ROUND_REGISTRY, setup_cid, committee, committee)
        if not admitted:
            return finish_failed(FailureReason.NO_CONTRIBUTORS, rejected=rejected)

        cohorts: list[list[bytes]] = [[] for _ in range(M)]
        for pid in admitted:
            cohorts[cohort_of[pid]].append(pid)
        t = committee_threshold(M)
        seeds: dict[bytes, list[MaskSeed]] = {pid: [] for pid in admitted}
        shares: dict[tuple[bytes, bytes], list[ShamirShare]] = {}
        share_rng = self._pyrng("shamir", round_id)
        for members in cohorts:
            for a_i, a in enumerate(members):
                for b in members[a_i + 1 :]:
                    lo, hi = min(a, b), max(a, b)
                    s = (derive_seed(self.seed, "pair", round_id, lo, hi) % FIELD_PRIME).to_bytes(32, "big")
                    ms = MaskSeed(lo, hi, s)
                    seeds[a].append(ms)
                    seeds[b].append(ms)
                    shares[(lo, hi)] = shamir_split(s, t, M, list(committee), share_rng)
        state.advance(Phase.TRAINING)

        # ---- Training
        weights = {pid: inputs.weights.get(pid, FixedAmount(SCALE)) for pid in admitted}
        dp = dp_config(bundle)
        noised: dict[bytes, np.ndarray] = {}
        submitted: dict[bytes, MaskedUpdate] = {}
        for pid in admitted:
            if pid in inputs.dropped:
                continue
            if pid in inputs.field_updates:
                x = np.asarray(inputs.field_updates[pid], dtype=object) % FIELD_PRIME
            else:
                raw = inputs.updates.get(pid, np.zeros(self.dim))
                noisy = clip_and_noise(raw, dp, self._rng("dp", round_id, pid))
                noised[pid] = noisy
                x = quantize(noisy)
            upd = make_masked_update(pid, x, weights[pid], seeds[pid])
            if self.keep_masked:
                self.store.put(tuple(int(e) for e in upd.vector))
            submitted[pid] = upd
        state.advance(Phase.AGGREGATION)

        # ---- Aggregation
        bounds = weight_bounds(bundle)
        behavior = {n: inputs.node_behavior.get(n, "honest") for n in committee}
        responsive = [n for n in committee if behavior[n] != "withhold"]
        slashes: list[econ.SlashEvent] = []
        node_sums: list[NodeLocalSum] = []
        included_nodes: list[bytes] = []
        blind_rng = self._pyrng("blinding", round_id)
        try:
            for j, node in enumerate(committee):
                members = cohorts[j]
                blinding = blind_rng.randrange(FIELD_PRIME)
                if behavior[node] == "withhold":
                    slashes.append(self._slash(node, econ.Fault.LIVENESS_FAILURE))
                    continue
                alive = [p for p in members if p in submitted]
                dropped = [p for p in members if p not in submitted]
                avail = {
                    pair: [s for s in sh if s.holder in responsive]
                    for pair, sh in shares.items()
                    if pair[0] in dropped or pair[1] in dropped
                }
                correction, _ = reconstruct_dropouts(dropped, alive, avail, self.dim)
                vec = (weighted_sum([submitted[p] for p in alive], self.dim, bounds) + correction) % FIELD_PRIME
                key = self.validators[node].key
                if behavior[node] == "poison":
                    spike = quantize(np.full(self.dim, 1e6))
                    vec = (vec + spike) % FIELD_PRIME
                if behavior[node] == "forge":
                    ns = seal_local_sum(key, round_id, vec, blinding)
                    ns = NodeLocalSum(ns.node, ns.sum, ns.commitment, ns.blinding, bytes(64))
                else:
                    ns = seal_local_sum(key, round_id, vec, blinding)
                if behavior[node] == "equivocate":
                    # a second, conflicting signed commitment reaches the sequencer
                    alt = seal_local_sum(key, round_id, (vec + 1) % FIELD_PRIME, blinding)
                    if alt.commitment != ns.commitment:
                        slashes.append(self._slash(node, econ.Fault.INVALID_PROOF))
                        continue
                if not ns.verify(round_id):
                    slashes.append(self._slash(node, econ.Fault.INVALID_PROOF))
                    continue
                node_sums.append(ns)
                included_nodes.append(node)
        except InsufficientSharesError:
            return finish_failed(FailureReason.AGGREGATION_ERROR, rejected=rejected, slashes=slashes)

        quorum = 2 * byzantine_bound(M) + 1
        if len(node_sums) < quorum:
            return finish_failed(FailureReason.CONSENSUS_ERROR, rejected=rejected, slashes=slashes)

        node_index = {n: j for j, n in enumerate(committee)}
        included = sorted(p for n in included_nodes for p in cohorts[node_index[n]] if p in submitted)
        dropped_all = sorted(p for n in included_nodes for p in cohorts[node_index[n]] if p not in submitted)
        if not included:
            return finish_failed(FailureReason.NO_CONTRIBUTORS, rejected=rejected, slashes=slashes)
        entries = tuple(
            SubmissionEntry(
                pid,
                cohort_of[pid],
                committee[cohort_of[pid]],
                weights[pid],
                submitted[pid].cid if pid in submitted else None,
            )
            for pid in admitted
        )
        submissions_cid = self.store.put(Submissions(round_id, entries, tuple(sorted(included_nodes))))
        weights_root = merkle_root([weight_leaf(p, weights[p]) for p in included])
        agg_policy = aggregation_policy(bundle)
        filt = byzantine_filter(node_sums, self.variance_history, agg_policy)
        proof = generate_proof(
            node_sums,
            dropout_set_commitment(dropped_all),
            filt.method,
            weights_root,
            policy_cid,
            round_id,
            M,
            excluded_nodes=[n for n in committee if n not in included_nodes],
            statistic=filt.statistic,
            threshold=filt.threshold,
        )
        proof_cid = self.store.put(proof)
        self._approve(SharedKind.ROUND_REGISTRY, proof_cid, included_nodes, committee)
        if filt.method == RobustMethod.NONE:
            self.variance_history.append(filt.statistic)

        field_sum = field_zeros(self.dim)
        for ns in node_sums:
            field_sum = (field_sum + ns.sum) % FIELD_PRIME
        blinding_sum = sum(ns.blinding for ns in node_sums) % FIELD_PRIME
        total_weight = sum(weights[p].raw for p in included)
        if filt.method == RobustMethod.NONE:
            g = dequantize(field_sum) / total_weight
        else:
            g = filt.value * len(node_sums) / total_weight
        g_fixed = tuple(int(v) for v in np.floor(g * SCALE).astype(np.int64))
        aggregate_cid = self.store.put(
            AggregateArtifact(round_id, tuple(int(v) for v in field_sum), blinding_sum, total_weight, filt.method.value, g_fixed)
        )
        state.advance(Phase.PUBLICATION)

        # ---- Publication: novelty and safety
        nov = decompose(g, self.tracker.basis)
        try:
            safety = safety_gate(inputs.candidate_scores, inputs.baseline_scores, bundle)
        except EvaluationError:
            return finish_failed(FailureReason.EVALUATION_ERROR, rejected=rejected, slashes=slashes, proof_cid=proof_cid)
        if not safety.passed:
            return finish_failed(
                FailureReason.SAFETY_GATE, rejected=rejected, slashes=slashes, proof_cid=proof_cid, safety=safety
            )
        phi_ema_f = smooth(self.tracker.phi_ema, nov.phi, self.tracker.lam)
        self.tracker.phi_ema = phi_ema_f
        if nov.phi >= 1e-9:
            self.tracker.basis = rotate_basis(self.tracker.basis, nov.g_perp)
        basis_cid = self.store.put(checkpoint(self.tracker.basis))

        # ---- Settlement
        ne = bundle.novelty_econ
        alloc = econ.split_pool(pool, (ne.alpha_C, ne.alpha_M, ne.alpha_T))
        phi_ema = econ.phi_decimal(phi_ema_f)
        phi_pay = econ.novelty_factor(nov.phi, phi_ema)
        reps = {p: self.ledger.registries[p].reputation for p in included}
        settle = econ.contributor_rewards(
            alloc.P_C, ne.r_base, ne.beta, phi_pay, reps, econ.weight_shares({p: weights[p] for p in included})
        )
        fee, committee_dust = econ.committee_fees(alloc.P_M, len(included_nodes))
        contributor_tree = econ.build_payout_tree([(r.pid, r.total) for r in settle.rewards])
        committee_tree = econ.build_payout_tree([(n, fee) for n in included_nodes])
        self.treasury = self.treasury + alloc.P_T + sum((s.amount for s in slashes), FixedAmount.ZERO)
        settlement = SettlementArtifact(
            round_id,
            tuple(
                RewardLine(r.pid, r.rho, weights[r.pid], r.r_base_component, r.r_quality, r.r_nov)
                for r in settle.rewards
            ),
            contributor_tree.leaves,
            committee_tree.leaves,
            alloc.P_T,
        )
        settlement_cid = self.store.put(settlement)
        commitment_bytes = combine([ns.commitment for ns in node_sums]).to_bytes()
        receipt = build_accepted_receipt(
            round_id,
            pool,
            alloc,
            settle.pools,
            len(included),
            ne.r_base,
            ne.beta,
            phi_ema,
            M,
            alloc.P_M.to_fraction() / len(included_nodes),
            contributor_tree.root,
            committee_tree.root,
            settle.dust,
            committee_dust,
            phi_t=float(nov.phi),
            proof_cid=proof_cid,
            policy_cid=policy_cid,
            params_cid=self.params_cid,
            aggregate_commitment=commitment_bytes,
            committee=committee,
            fee_recipients=tuple(sorted(included_nodes)),
            settlement_cid=settlement_cid,
            submissions_cid=submissions_cid,
            basis_cid=basis_cid,
            aggregate_cid=aggregate_cid,
            escrow_cid=escrow_cid,
            safety=safety,
            slashes=tuple(slashes),
        )
        receipt_cid = self.store.put(receipt)
        self._approve(SharedKind.ROUND_REGISTRY, receipt_cid, included_nodes, committee)
        self._approve(SharedKind.MODEL_REGISTRY, aggregate_cid, included_nodes, committee)

        # owned writes: each rewarded contributor updates its own registry
        trimmed = self._trimmed_cohorts(filt, node_sums, included_nodes, node_index, agg_policy.robust_alpha)
        for pid in included:
            reg = self.ledger.registries[pid]
            changes = {
                "reputation": econ.update_reputation(reg.reputation, True, cohort_of[pid] in trimmed),
                "epsilon_spent": account_privacy(dp, reg.rounds_charged + 1),
                "rounds_charged": reg.rounds_charged + 1,
                "participation": reg.participation + (round_id,),
            }
            self.ledger.owned_write(pid, changes, sign_owned(self.contributors[pid].key, reg, changes))

        state.advance(Phase.ACCEPTED)
        log.finalize(round_id)
        self.prev_receipt = receipt_cid
        self.prev_ema = pool.ema_value
        self.receipts.append(receipt_cid)
        return RoundOutcome(
            round_id,
            Phase.ACCEPTED.value,
            receipt,
            receipt_cid,
            state,
            phi=nov.phi,
            phi_ema=phi_ema_f,
            noised=noised,
            rewards={r.pid: r for r in settle.rewards},
            fees={n: fee for n in included_nodes},
            aggregate=g,
            g_perp=nov.g_perp,
            included=tuple(included),
            rejected=rejected,
            gas_owned=self.ledger.gas.owned_updates - owned0,
            gas_shared=self.ledger.gas.shared_updates - shared0,
        )

    # -- pieces --------------------------------------------------------------

    def _slash(self, node: bytes, fault: econ.Fault) -> econ.SlashEvent:
        v = self.validators[node]
        event, remaining = econ.slash(v.stake, fault, node)
        v.stake = remaining
        self.slash_log.append(event)
        return event

    def _trimmed_cohorts(self, filt, node_sums, included_nodes, node_index, alpha: float) -> set[int]:
        """Cohorts whose node sum sits farthest from the median (heuristic high-variance flag)."""
        k = int(alpha * len(node_sums))
        if filt.method == RobustMethod.NONE or k == 0:
            return set()
        values = np.array([dequantize(ns.sum) for ns in node_sums])
        centre = np.median(values, axis=0)
        dist = np.abs(values - centre).mean(axis=1)
        worst = np.argsort(dist)[-k:]
        return {node_index[included_nodes[i]] for i in worst}

    def _fail(
        self,
        state: RoundState,
        pool: econ.RoundPool,
        escrow_log: EscrowLog,
        escrow_cid: Cid,
        committee: Sequence[bytes],
        reason: FailureReason,
        owned0: int,
        shared0: int,
        rejected: Mapping[bytes, str] | None = None,
        slashes: Sequence[econ.SlashEvent] = (),
        proof_cid: Cid | None = None,
        safety: SafetyEvaluation | None = None,
    ) -> RoundOutcome:
        refund = econ.refunds(escrow_log.escrows, pool.P_bootstrap)
        refunds_cid = self.store.put(refund)
        zero = "0.0"
        receipt = FailedReceipt(
            receipt_id=state.round_id,
            round_id=state.round_id,
            round_status=Phase.FAILED.value,
            failure_reason=reason.value,
            P_receivers=money(pool.P_receivers),
            P_bootstrap=money(pool.P_bootstrap),
            P_total=money(pool.P_total),
            bootstrap_active=pool.bootstrap_active,
            ema_value=money(pool.ema_value),
            P_C=zero,
            P_M=zero,
            P_T=zero,
            refund_root=refund.refund_root,
            refund_dust=money(refund.refund_dust),
            bootstrap_reclaimed=money(refund.bootstrap_reclaimed),
            policy_cid=state.policy_cid,
            params_cid=self.params_cid,
            committee=tuple(committee),
            escrow_cid=escrow_cid,
            refunds_cid=refunds_cid,
            proof_cid=proof_cid,
            safety=safety,
            slashes=tuple(slashes),
        )
        receipt_cid = self.store.put(receipt)
        self.treasury = self.treasury + sum((s.amount for s in slashes), FixedAmount.ZERO)
        self._approve(SharedKind.ROUND_REGISTRY, receipt_cid, committee, committee)
        self.policy_log.finalize(state.round_id)
        self.prev_receipt = receipt_cid
        self.receipts.append(receipt_cid)
        return RoundOutcome(
            state.round_id,
            Phase.FAILED.value,
            receipt,
            receipt_cid,
            state,
            refunds=refund,
            rejected=dict(rejected or {}),
            gas_owned=self.ledger.gas.owned_updates - owned0,
            gas_shared=self.ledger.gas.shared_updates - shared0,
        )

