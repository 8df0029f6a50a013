"""Policy bundles, time-locked activation, governance phases and emergency halts."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from math import isqrt
from typing import Mapping, Sequence

from .codec import Cid, FixedAmount, cid_of, parse_ratio, schema, to_fixed
from .crypto import SigningKey, verify_signature

ZERO_CID = Cid(bytes(32))
PHASE_BOUNDARIES = (500, 2000)
T_LOCK_MIN = {0: 5, 1: 10, 2: 20}
HALT_MAX_ROUNDS = 36  # 72 h at a 2 h cadence
MULTISIG_SIZE, MULTISIG_THRESHOLD = 5, 3
COUNCIL_SIZE = 9
STAKE_QUORUM = parse_ratio("0.20")
SUPERMAJORITY = parse_ratio("0.66")

APPROVAL_DOMAIN = b"PGOT-policy"


class LockPeriodError(ValueError):
    pass


class RevertError(RuntimeError):
    pass


class QuorumError(RuntimeError):
    pass


class GenesisError(LookupError):
    pass


class HaltLimitError(RuntimeError):
    pass


class PolicyValidationError(ValueError):
    pass


class EnsembleRule(str, Enum):
    ALL_PASS = "all_pass"
    MAJORITY = "majority_pass_and_no_exceed_threshold_plus_1pct"


class Phase(IntEnum):
    PHASE0 = 0
    PHASE1 = 1
    PHASE2 = 2

    @property
    def t_lock_min(self) -> int:
        return T_LOCK_MIN[int(self)]


def phase_for_round(round_id: int) -> Phase:
    if round_id < PHASE_BOUNDARIES[0]:
        return Phase.PHASE0
    if round_id < PHASE_BOUNDARIES[1]:
        return Phase.PHASE1
    return Phase.PHASE2


# ---------------------------------------------------------------------------
# Bundle schema
# ---------------------------------------------------------------------------


@schema("ProxyConfig")
@dataclass(frozen=True)
class ProxyConfig:
    name: str
    cid: Cid
    sha256: str
    threshold: float


@schema("SafetyBundle")
@dataclass(frozen=True)
class SafetyBundle:
    proxy_configs: tuple = ()
    ensemble_rule: str = EnsembleRule.ALL_PASS.value
    evaluation_set_cid: Cid = ZERO_CID
    numerical_tolerance: float = 0.001


@schema("DpBundle")
@dataclass(frozen=True)
class DpBundle:
    epsilon_per_round: float = 1.0
    delta_global: float = 1e-6
    clipping_norm: float = 1.0
    noise_scale: float = 0.5
    accountant: str = "renyi"
    epsilon_budget: float = 1000.0


@schema("AdmissionBundle")
@dataclass(frozen=True)
class AdmissionBundle:
    min_stake: FixedAmount = to_fixed("10.0")
    attestation_required: bool = False
    k_anonymity_threshold: int = 500
    deadline_submission_sec: int = 5400
    deadline_aggregation_sec: int = 900


@schema("AggregationBundle")
@dataclass(frozen=True)
class AggregationBundle:
    robust_method: str = "trimmed_mean"
    robust_alpha: float = 0.2
    robust_theta_percentile: int = 90
    quantization_bits: int = 0
    variance_window: int = 20
    w_min: FixedAmount = FixedAmount(1)
    w_max: FixedAmount = to_fixed("1.0")


@schema("NoveltyEconBundle")
@dataclass(frozen=True)
class NoveltyEconBundle:
    beta: str = "0.3"
    lambda_ema: str = "0.7"
    basis_size: int = 20
    basis_rotation: str = "incremental"
    alpha_C: str = "0.70"
    alpha_M: str = "0.20"
    alpha_T: str = "0.10"
    r_base: str = "0.01"


@schema("Timelock")
@dataclass(frozen=True)
class Timelock:
    propose_round: int = 0
    activation_round: int = 0
    T_lock: int = 5
    policy_cid: Cid = ZERO_CID


@schema("PolicyBundle")
@dataclass(frozen=True)
class PolicyBundle:
    safety: SafetyBundle = field(default_factory=SafetyBundle)
    dp: DpBundle = field(default_factory=DpBundle)
    admission: AdmissionBundle = field(default_factory=AdmissionBundle)
    aggregation: AggregationBundle = field(default_factory=AggregationBundle)
    novelty_econ: NoveltyEconBundle = field(default_factory=NoveltyEconBundle)
    timelock: Timelock = field(default_factory=Timelock)

    def content(self) -> PolicyBundle:
        """The bundle with its scheduling fields zeroed; this is what gets hashed."""
        return replace(self, timelock=Timelock(T_lock=self.timelock.T_lock))

    @property
    def policy_cid(self) -> Cid:
        return cid_of(self.content())

    def sealed(self, propose_round: int, activation_round: int) -> PolicyBundle:
        tl = Timelock(propose_round, activation_round, self.timelock.T_lock, self.policy_cid)
        return replace(self, timelock=tl)

    def alphas(self) -> tuple:
        ne = self.novelty_econ
        return tuple(parse_ratio(a) for a in (ne.alpha_C, ne.alpha_M, ne.alpha_T))

    def validate(self) -> None:
        if sum(self.alphas()) != 1:
            raise PolicyValidationError("alpha_C + alpha_M + alpha_T must equal 1")
        if self.aggregation.robust_method not in ("none", "trimmed_mean", "median"):
            raise PolicyValidationError(f"unknown robust_method {self.aggregation.robust_method!r}")
        if not 0 <= self.aggregation.robust_alpha < 0.5:
            raise PolicyValidationError("robust_alpha must lie in [0, 0.5)")
        if self.safety.ensemble_rule not in {r.value for r in EnsembleRule}:
            raise PolicyValidationError(f"unknown ensemble_rule {self.safety.ensemble_rule!r}")
        if self.novelty_econ.basis_rotation not in ("full", "incremental"):
            raise PolicyValidationError("basis_rotation must be 'full' or 'incremental'")
        if self.timelock.T_lock < 0:
            raise PolicyValidationError("T_lock must be nonnegative")


def proxy(name: str, threshold: float) -> ProxyConfig:
    digest = hashlib.sha256(b"proxy:" + name.encode()).digest()
    return ProxyConfig(name, Cid(digest), digest.hex(), threshold)


DEFAULT_PROXIES = (proxy("toxicity", 0.05), proxy("bias", 0.05), proxy("refusal", 0.05))


def default_bundle(**sections) -> PolicyBundle:
    safety = SafetyBundle(
        proxy_configs=DEFAULT_PROXIES,
        evaluation_set_cid=Cid(hashlib.sha256(b"evaluation-set:v1").digest()),
    )
    return PolicyBundle(safety=safety, **sections)


def is_constitutional(old: PolicyBundle | None, new: PolicyBundle) -> bool:
    """Alpha splits are constitutional; so are phase settings (not bundle fields here)."""
    if old is None:
        return True
    o, n = old.novelty_econ, new.novelty_econ
    return (o.alpha_C, o.alpha_M, o.alpha_T) != (n.alpha_C, n.alpha_M, n.alpha_T)


# ---------------------------------------------------------------------------
# Approvals
# ---------------------------------------------------------------------------


def vote_weight(stake: FixedAmount) -> int:
    """floor(sqrt(whole units of stake))."""
    return isqrt(stake.raw >> 16)


def approval_message(policy_cid: Cid, activation_round: int) -> bytes:
    return APPROVAL_DOMAIN + policy_cid.digest + activation_round.to_bytes(8, "big")


@dataclass(frozen=True)
class Vote:
    voter: bytes
    stake: FixedAmount
    approve: bool


@dataclass(frozen=True)
class Governance:
    multisig: tuple[bytes, ...] = ()
    council: tuple[bytes, ...] = ()
    total_stake: FixedAmount = FixedAmount(0)


@dataclass(frozen=True)
class Approvals:
    signatures: Mapping[bytes, bytes] = field(default_factory=dict)
    votes: tuple[Vote, ...] = ()


def sign_approvals(keys: Sequence[SigningKey], proposal: ProposalRecord) -> Approvals:
    msg = approval_message(proposal.policy_cid, proposal.activation_round)
    return Approvals({k.public: k.sign(msg) for k in keys})


# ---------------------------------------------------------------------------
# Policy log
# ---------------------------------------------------------------------------


@schema("ProposalRecord")
@dataclass(frozen=True)
class ProposalRecord:
    policy_cid: Cid
    propose_round: int
    activation_round: int
    T_lock: int
    phase: int
    constitutional: bool


@schema("ActivationRecord")
@dataclass(frozen=True)
class ActivationRecord:
    policy_cid: Cid
    effective_round: int
    propose_round: int
    activation_round: int
    T_lock: int
    genesis: bool = False


@schema("EmergencyHalt")
@dataclass(frozen=True)
class EmergencyHalt:
    scope: int | None  # cohort id, or None for global
    start_round: int
    expiry_round: int
    justification: Cid

    def covers(self, round_id: int, cohort: int | None = None) -> bool:
        if not self.start_round <= round_id < self.expiry_round:
            return False
        return self.scope is None or cohort is None or self.scope == cohort


@schema("PolicyLogState")
@dataclass(frozen=True)
class PolicyLogState:
    bundles: tuple
    proposals: tuple
    activations: tuple
    halts: tuple
    finalized_round: int


class PolicyLog:
    """Append-only record of bundles, proposals, activations and halts."""

    def __init__(self, governance: Governance | None = None) -> None:
        self.governance = governance or Governance()
        self.bundles: dict[Cid, PolicyBundle] = {}
        self.proposals: list[ProposalRecord] = []
        self.activations: list[ActivationRecord] = []
        self.halts: list[EmergencyHalt] = []
        self.finalized_round = -1

    # -- lifecycle ---------------------------------------------------------

    def install_genesis(self, bundle: PolicyBundle, round_id: int = 0) -> Cid:
        if self.activations:
            raise RevertError("genesis already installed")
        bundle.validate()
        sealed = bundle.sealed(round_id, round_id)
        cid = sealed.policy_cid
        self.bundles[cid] = sealed
        self.activations.append(
            ActivationRecord(cid, round_id, round_id, round_id, sealed.timelock.T_lock, genesis=True)
        )
        return cid

    def propose(
        self,
        bundle: PolicyBundle,
        current_round: int,
        requested_activation: int | None = None,
        phase: Phase | None = None,
    ) -> ProposalRecord:
        bundle.validate()
        phase = phase_for_round(current_round) if phase is None else Phase(phase)
        t_lock = bundle.timelock.T_lock
        if t_lock < phase.t_lock_min:
            raise LockPeriodError(f"T_lock {t_lock} below phase {int(phase)} minimum {phase.t_lock_min}")
        earliest = current_round + t_lock
        if requested_activation is not None and requested_activation < earliest:
            raise LockPeriodError(f"activation {requested_activation} precedes earliest round {earliest}")
        activation = earliest if requested_activation is None else requested_activation
        sealed = bundle.sealed(current_round, activation)
        cid = sealed.policy_cid
        current = self.active_bundle_or_none(current_round)
        record = ProposalRecord(
            cid, current_round, activation, t_lock, int(phase), is_constitutional(current, sealed)
        )
        self.bundles.setdefault(cid, sealed)
        self.proposals.append(record)
        return record

    def check_approvals(self, proposal: ProposalRecord, approvals: Approvals) -> None:
        phase = Phase(proposal.phase)
        gov = self.governance
        msg = approval_message(proposal.policy_cid, proposal.activation_round)

        def valid_signers(keys: Sequence[bytes]) -> int:
            return sum(
                1
                for k in keys
                if k in approvals.signatures and verify_signature(k, approvals.signatures[k], msg)
            )

        if phase == Phase.PHASE0:
            got = valid_signers(gov.multisig)
            if got < MULTISIG_THRESHOLD:
                raise QuorumError(f"multisig {got}-of-{len(gov.multisig)}, need {MULTISIG_THRESHOLD}")
        elif phase == Phase.PHASE1:
            got = valid_signers(gov.council)
            need = len(gov.council) // 2 + 1
            if got < need:
                raise QuorumError(f"council approvals {got}, need {need}")
        else:
            voters = {}
            for v in approvals.votes:
                voters.setdefault(v.voter, v)
            turnout = sum((v.stake.raw for v in voters.values()), 0)
            if gov.total_stake.raw == 0 or turnout * STAKE_QUORUM.denominator < (
                STAKE_QUORUM.numerator * gov.total_stake.raw
            ):
                raise QuorumError("stake turnout below 20% quorum")
            yes = sum(vote_weight(v.stake) for v in voters.values() if v.approve)
            total = sum(vote_weight(v.stake) for v in voters.values())
            if proposal.constitutional:
                passed = yes * SUPERMAJORITY.denominator >= SUPERMAJORITY.numerator * total
            else:
                passed = 2 * yes > total
            if total == 0 or not passed:
                raise QuorumError(f"vote {yes}/{total} fails the required majority")

    def activate(self, proposal: ProposalRecord, current_round: int, approvals: Approvals | None = None) -> ActivationRecord:
        if current_round < proposal.activation_round:
            raise RevertError(
                f"round {current_round} precedes activation round {proposal.activation_round}"
            )
        if current_round <= self.finalized_round:
            raise RevertError(f"round {current_round} is already finalized")
        if self.activations and current_round < self.activations[-1].effective_round:
            raise RevertError("activations must be recorded in round order")
        self.check_approvals(proposal, approvals or Approvals())
        record = ActivationRecord(
            proposal.policy_cid,
            current_round,
            proposal.propose_round,
            proposal.activation_round,
            proposal.T_lock,
        )
        self.activations.append(record)
        return record

    def finalize(self, round_id: int) -> None:
        self.finalized_round = max(self.finalized_round, round_id)

    # -- queries -----------------------------------------------------------

    def activation_at(self, round_id: int) -> ActivationRecord:
        if round_id < 0:
            raise ValueError("round must be nonnegative")
        found = None
        for rec in self.activations:
            if rec.effective_round <= round_id:
                found = rec
            else:
                break
        if found is None:
            raise GenesisError(f"no policy active at round {round_id}")
        return found

    def active_policy_at(self, round_id: int) -> Cid:
        return self.activation_at(round_id).policy_cid

    def bundle(self, cid: Cid) -> PolicyBundle:
        return self.bundles[cid]

    def active_bundle(self, round_id: int) -> PolicyBundle:
        return self.bundles[self.active_policy_at(round_id)]

    def active_bundle_or_none(self, round_id: int) -> PolicyBundle | None:
        try:
            return self.active_bundle(round_id)
        except GenesisError:
            return None

    # -- halts -------------------------------------------------------------

    def halt(
        self,
        scope: int | None,
        current_round: int,
        justification: Cid,
        duration: int = HALT_MAX_ROUNDS,
    ) -> EmergencyHalt:
        if not 1 <= duration <= HALT_MAX_ROUNDS:
            raise HaltLimitError(f"halt duration must be within 1..{HALT_MAX_ROUNDS} rounds")
        if any(h.scope == scope for h in self.active_halts(current_round)):
            raise HaltLimitError(f"a halt for scope {scope!r} is already active")
        record = EmergencyHalt(scope, current_round, current_round + duration, justification)
        self.halts.append(record)
        return record

    def active_halts(self, current_round: int) -> list[EmergencyHalt]:
        return [h for h in self.halts if h.covers(current_round)]

    def expire_halts(self, current_round: int) -> list[EmergencyHalt]:
        """Halts whose expiry has passed; the records stay in the log."""
        return [h for h in self.halts if h.expiry_round <= current_round]

    def halted(self, round_id: int, cohort: int | None = None) -> EmergencyHalt | None:
        for h in self.halts:
            if h.covers(round_id) and (h.scope is None or h.scope == cohort):
                return h
        return None

    # -- persistence -------------------------------------------------------

    def state(self) -> PolicyLogState:
        return PolicyLogState(
            bundles=tuple(self.bundles[c] for c in sorted(self.bundles)),
            proposals=tuple(self.proposals),
            activations=tuple(self.activations),
            halts=tuple(self.halts),
            finalized_round=self.finalized_round,
        )

    @classmethod
    def from_state(cls, state: PolicyLogState, governance: Governance | None = None) -> PolicyLog:
        log = cls(governance)
        log.bundles = {b.policy_cid: b for b in state.bundles}
        log.proposals = list(state.proposals)
        log.activations = list(state.activations)
        log.halts = list(state.halts)
        log.finalized_round = state.finalized_round
        return log


def active_policy_oracle(activations: Sequence[ActivationRecord], round_id: int) -> Cid | None:
    """Linear scan reference used by tests and the auditor."""
    best = None
    for rec in activations:
        if rec.effective_round <= round_id:
            best = rec.policy_cid
    return best

