"""Scenario files and the deterministic batch runner behind ``pgot run``.

A scenario is a small TOML document: population sizes, an adversary script,
escrow settings and per-section overrides onto the default policy bundle.
Every random draw is derived from ``(seed, tag, round, index)`` so two runs of
the same file and seed produce the same bytes.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli

from .aggregation import AggregationPolicy, clip_and_noise
from .audit import AuditReport, verify_receipt
from .codec import FixedAmount, SCALE, to_fixed
from .crypto import FIELD_PRIME, SigningKey, field_inverse, quantize
from .policy import (
    Governance,
    LockPeriodError,
    PolicyBundle,
    PolicyLog,
    PolicyValidationError,
    RevertError,
    default_bundle,
    proxy,
    sign_approvals,
)
from .round import Participant, Protocol, RoundInputs, RoundOutcome, derive_seed, dp_config
from .store import ContentStore


class ConfigError(ValueError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class Adversary(str, Enum):
    NONE = "none"
    REPLAY = "replay"
    SYBIL_SPLIT = "sybil_split"
    BYZANTINE_NODES = "byzantine_nodes"
    DROPOUT = "dropout"
    GOVERNANCE_EARLY_ACTIVATION = "governance_early_activation"
    PROXY_FAILURE = "proxy_failure"


NODE_BEHAVIOURS = ("poison", "withhold", "equivocate", "forge")


@dataclass(frozen=True)
class AdversaryScript:
    kind: Adversary = Adversary.NONE
    n: int = 10  # sybil identities
    f: int = 1  # faulty committee nodes per round
    behavior: str = "poison"
    rate: float = 0.1  # dropout probability
    rounds: tuple[int, ...] = ()  # empty means every round (or a kind-specific default)


@dataclass(frozen=True)
class Workload:
    signal: float = 0.5
    spread: float = 0.2
    baseline_score: float = 0.1
    score_drift: float = 0.01
    failing_score: float = 0.5


@dataclass(frozen=True)
class EconomyConfig:
    receivers: int = 5
    escrow: str = "10.5"
    bootstrap: str | None = None
    contributor_stake: str = "20.0"
    validator_stake: str = "100.0"
    attestation_cost: str = "0.1"


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    rounds: int = 20
    N: int = 200
    M: int = 7
    dim: int = 1024
    validators: int = 10
    k_anonymity: int = 1
    store_masked: bool = False
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    economy: EconomyConfig = field(default_factory=EconomyConfig)
    workload: Workload = field(default_factory=Workload)
    policy: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def bundle(self) -> PolicyBundle:
        return apply_overrides(default_bundle(), self.policy)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _coerce(path: str, value: Any, like: Any) -> Any:
    if isinstance(like, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(like, FixedAmount):
        if not isinstance(value, str):
            raise ConfigError(path, "amounts are written as decimal strings, e.g. \"10.0\"")
        try:
            return to_fixed(value)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    if isinstance(like, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(like, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(like, str) or like is None:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, "field cannot be overridden from a scenario file")


def _fill(cls, table: Mapping[str, Any], path: str, special: Mapping[str, Any] | None = None):
    if not isinstance(table, Mapping):
        raise ConfigError(path, "expected a table")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(sub, "unknown key")
        if special and key in special:
            kwargs[key] = special[key](sub, value)
        else:
            kwargs[key] = _coerce(sub, value, getattr(defaults, key))
    return cls(**kwargs)


def _proxies(path: str, value: Any) -> tuple:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty array of {name, threshold} tables")
    out = []
    for i, item in enumerate(value):
        sub = f"{path}[{i}]"
        if not isinstance(item, Mapping) or set(item) != {"name", "threshold"}:
            raise ConfigError(sub, "each proxy needs exactly name and threshold")
        out.append(proxy(_coerce(sub + ".name", item["name"], ""), _coerce(sub + ".threshold", item["threshold"], 0.0)))
    return tuple(out)


def apply_overrides(bundle: PolicyBundle, overrides: Mapping[str, Mapping[str, Any]]) -> PolicyBundle:
    sections = {f.name for f in dataclasses.fields(PolicyBundle)}
    changes = {}
    for name, table in overrides.items():
        path = f"policy.{name}"
        if name not in sections:
            raise ConfigError(path, "unknown policy section")
        current = getattr(bundle, name)
        if not isinstance(table, Mapping):
            raise ConfigError(path, "expected a table")
        updates = {}
        for key, value in table.items():
            sub = f"{path}.{key}"
            if not hasattr(current, key) or key in ("propose_round", "activation_round", "policy_cid"):
                raise ConfigError(sub, "unknown or non-overridable key")
            if key == "proxy_configs":
                updates[key] = _proxies(sub, value)
            else:
                updates[key] = _coerce(sub, value, getattr(current, key))
        changes[name] = replace(current, **updates)
    out = replace(bundle, **changes)
    try:
        out.validate()
    except PolicyValidationError as exc:
        raise ConfigError("policy", str(exc)) from None
    return out


def _adversary(path: str, table: Any) -> AdversaryScript:
    def kind(sub, v):
        try:
            return Adversary(v)
        except ValueError:
            raise ConfigError(sub, f"unknown adversary {v!r}; expected one of {[a.value for a in Adversary]}") from None

    def rounds(sub, v):
        if not isinstance(v, list) or not all(isinstance(r, int) and not isinstance(r, bool) and r >= 1 for r in v):
            raise ConfigError(sub, "expected an array of positive round numbers")
        return tuple(v)

    script = _fill(AdversaryScript, table, path, {"kind": kind, "rounds": rounds})
    if script.behavior not in NODE_BEHAVIOURS:
        raise ConfigError(f"{path}.behavior", f"expected one of {NODE_BEHAVIOURS}")
    if not 0.0 <= script.rate < 1.0:
        raise ConfigError(f"{path}.rate", "dropout rate must lie in [0, 1)")
    if script.kind == Adversary.SYBIL_SPLIT and not 1 <= script.n <= SCALE:
        raise ConfigError(f"{path}.n", f"sybil split must be between 1 and {SCALE} identities")
    if script.f < 0:
        raise ConfigError(f"{path}.f", "must be nonnegative")
    return script


def parse_scenario(data: Mapping[str, Any]) -> Scenario:
    special = {
        "adversary": _adversary,
        "economy": lambda p, v: _fill(EconomyConfig, v, p),
        "workload": lambda p, v: _fill(Workload, v, p),
        "policy": lambda p, v: _policy_table(p, v),
    }
    sc = _fill(Scenario, data, "", special)
    for key, low in (("rounds", 1), ("N", 1), ("M", 4), ("dim", 1), ("validators", 4), ("k_anonymity", 1)):
        if getattr(sc, key) < low:
            raise ConfigError(key, f"must be at least {low}")
    if sc.validators < sc.M:
        raise ConfigError("validators", f"need at least M={sc.M} validators")
    if sc.adversary.f > sc.M:
        raise ConfigError("adversary.f", "more faulty nodes than committee seats")
    for key in ("escrow", "contributor_stake", "validator_stake", "attestation_cost") + (
        ("bootstrap",) if sc.economy.bootstrap is not None else ()
    ):
        try:
            to_fixed(getattr(sc.economy, key))
        except ValueError as exc:
            raise ConfigError(f"economy.{key}", str(exc)) from None
    sc.bundle()  # surfaces override errors at load time
    return sc


def _policy_table(path: str, value: Any) -> dict:
    if not isinstance(value, Mapping):
        raise ConfigError(path, "expected a table of policy sections")
    return {k: dict(v) if isinstance(v, Mapping) else v for k, v in value.items()}


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return parse_scenario(data)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    status: str
    failure: str
    phi: float
    phi_ema: float
    phi_tilde: str
    P_nov: str
    included: int
    dropped: int
    rewards_honest: Fraction
    rewards_attacker: Fraction
    novelty_attacker: Fraction
    fees: Fraction
    slashed: Fraction
    gas_owned: int
    gas_shared: int
    audit_passed: bool


@dataclass(frozen=True)
class SybilRecord:
    round_id: int
    n: int
    g_perp_identical: bool
    phi_identical: bool
    sybil_reward: Fraction
    honest_reward: Fraction
    identity_cost: Fraction

    @property
    def sybil_net(self) -> Fraction:
        return self.sybil_reward - self.n * self.identity_cost

    @property
    def honest_net(self) -> Fraction:
        return self.honest_reward - self.identity_cost


@dataclass
class ScenarioResult:
    scenario: Scenario
    protocol: Protocol
    outcomes: list[RoundOutcome]
    records: list[RoundRecord]
    audits: list[AuditReport]
    governance_events: list[str] = field(default_factory=list)
    sybil: list[SybilRecord] = field(default_factory=list)

    @property
    def policy_log(self) -> PolicyLog:
        return self.protocol.policy_log

    @property
    def all_audits_pass(self) -> bool:
        return all(a.verdict for a in self.audits)


def _keys(seed: int, tag: str, n: int) -> list[SigningKey]:
    return [SigningKey.from_seed(f"{seed}/{tag}/{i}".encode()) for i in range(n)]


def governance_keys(seed: int, n: int = 5) -> list[SigningKey]:
    return _keys(seed, "multisig", n)


class _World:
    """One protocol instance plus the identities it was built with."""

    def __init__(self, sc: Scenario, contributors: list[Participant], store: ContentStore | None) -> None:
        eco = sc.economy
        validators = [Participant(k, to_fixed(eco.validator_stake)) for k in _keys(sc.seed, "validator", sc.validators)]
        gov = Governance(multisig=tuple(k.public for k in governance_keys(sc.seed)))
        log = PolicyLog(gov)
        log.install_genesis(sc.bundle())
        self.protocol = Protocol(
            contributors,
            validators,
            log,
            sc.dim,
            sc.M,
            store=store,
            seed=sc.seed,
            k_anonymity=sc.k_anonymity,
            keep_masked=sc.store_masked,
        )


def _update(sc: Scenario, round_id: int, index: int) -> np.ndarray:
    """Shared per-round direction plus individual spread, before clipping."""
    d = sc.dim
    common = np.random.default_rng(derive_seed(sc.seed, "signal", round_id)).normal(size=d)
    common *= sc.workload.signal / np.linalg.norm(common)
    own = np.random.default_rng(derive_seed(sc.seed, "update", round_id, index)).normal(size=d)
    return common + sc.workload.spread * own / np.sqrt(d)


def _scores(sc: Scenario, bundle: PolicyBundle, failing: bool) -> tuple[dict, dict]:
    w = sc.workload
    names = [p.name for p in bundle.safety.proxy_configs]
    baseline = {n: w.baseline_score for n in names}
    candidate = {n: w.baseline_score + w.score_drift for n in names}
    if failing:
        for n in names[:2]:
            candidate[n] = w.failing_score
    return candidate, baseline


def _escrows(sc: Scenario, round_id: int) -> list[tuple[bytes, FixedAmount]]:
    amount = to_fixed(sc.economy.escrow)
    return [(derive_seed(sc.seed, "receiver", i).to_bytes(16, "big"), amount) for i in range(sc.economy.receivers)]


def _active(script: AdversaryScript, round_id: int, default: tuple[int, ...] = ()) -> bool:
    rounds = script.rounds or default
    return not rounds or round_id in rounds


def _split(total: int, n: int, rng: random.Random) -> list[int]:
    """Random composition of ``total`` into ``n`` positive parts."""
    cuts = sorted(rng.sample(range(1, total), n - 1)) if n > 1 else []
    edges = [0] + cuts + [total]
    return [b - a for a, b in zip(edges, edges[1:])]


def sybil_field_vectors(x: np.ndarray, weight: int, parts: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    """Field vectors ``x_k`` with ``sum(parts[k] * x_k) == weight * x`` (mod q).

    All but the last are random field elements; the last one absorbs the
    difference, so the masked sum the committee sees is unchanged.
    """
    x = np.asarray(x, dtype=object) % FIELD_PRIME
    out = []
    acc = (x * weight) % FIELD_PRIME
    for w in parts[:-1]:
        v = np.array([int(a) for a in rng.integers(0, 2**63, size=x.shape[0])], dtype=object) % FIELD_PRIME
        out.append(v)
        acc = (acc - v * w) % FIELD_PRIME
    out.append((acc * field_inverse(parts[-1])) % FIELD_PRIME)
    return out


def run_scenario(sc: Scenario, store: ContentStore | None = None, audit: bool = True) -> ScenarioResult:
    eco = sc.economy
    adv = sc.adversary
    stake = to_fixed(eco.contributor_stake)
    bundle0 = sc.bundle()
    keys = _keys(sc.seed, "contributor", sc.N)
    honest = [Participant(k, stake) for k in keys]
    attackers: set[bytes] = set()

    shadow: _World | None = None
    sybil_parts: list[int] = []
    sybil_ids: list[Participant] = []
    if adv.kind == Adversary.SYBIL_SPLIT:
        # contributor 0 is the attacker; the shadow world runs the unsplit identity
        sybil_ids = [Participant(k, bundle0.admission.min_stake) for k in _keys(sc.seed, "sybil", adv.n)]
        sybil_parts = _split(SCALE, adv.n, random.Random(derive_seed(sc.seed, "partition")))
        world = _World(sc, honest[1:] + sybil_ids, store)
        shadow = _World(sc, honest, None)
        attackers = {p.pid for p in sybil_ids}
    else:
        world = _World(sc, honest, store)
        if adv.kind == Adversary.REPLAY:
            attackers = {p.pid for p in honest}

    proto = world.protocol
    log = proto.policy_log
    gov_keys = governance_keys(sc.seed)
    result = ScenarioResult(sc, proto, [], [], [])
    replay_source: dict[bytes, np.ndarray] = {}
    pending = None
    gov_round = (adv.rounds or (min(3, sc.rounds),))[0]
    # faulty nodes wait until the variance filter has an honest history to compare against
    warm = tuple(range(AggregationPolicy().min_history + 2, sc.rounds + 1)) or (sc.rounds,)

    for r in range(1, sc.rounds + 1):
        bundle = log.active_bundle(r)
        updates = {p.pid: _update(sc, r, i) for i, p in enumerate(honest)}
        inputs = RoundInputs(updates=updates, escrows=_escrows(sc, r))
        if eco.bootstrap is not None:
            inputs.bootstrap = to_fixed(eco.bootstrap)
        failing = adv.kind == Adversary.PROXY_FAILURE and _active(adv, r, (max(1, sc.rounds // 2),))
        inputs.candidate_scores, inputs.baseline_scores = _scores(sc, bundle, failing)

        if adv.kind == Adversary.REPLAY and replay_source:
            inputs.field_updates = dict(replay_source)
        if adv.kind == Adversary.DROPOUT and _active(adv, r):
            rng = random.Random(derive_seed(sc.seed, "dropout", r))
            inputs.dropped = frozenset(p.pid for p in honest if rng.random() < adv.rate)
        if adv.kind == Adversary.BYZANTINE_NODES and _active(adv, r, warm):
            inputs.node_behavior = {n: adv.behavior for n in proto.committee_for(r)[: adv.f]}
        if adv.kind == Adversary.GOVERNANCE_EARLY_ACTIVATION:
            pending = _governance_step(result, log, gov_keys, bundle, r, gov_round, pending)

        shadow_out = None
        if shadow is not None:
            attacker = honest[0]
            dp = dp_config(bundle)
            noisy = clip_and_noise(updates[attacker.pid], dp, np.random.default_rng(derive_seed(sc.seed, "attacker", r)))
            x = quantize(noisy)
            rng = np.random.default_rng(derive_seed(sc.seed, "sybil-vectors", r))
            vecs = sybil_field_vectors(x, SCALE, sybil_parts, rng)
            inputs.field_updates = {p.pid: v for p, v in zip(sybil_ids, vecs)}
            inputs.weights = {p.pid: FixedAmount(w) for p, w in zip(sybil_ids, sybil_parts)}
            shadow_in = replace(inputs, field_updates={attacker.pid: x}, weights={})
            shadow_out = shadow.protocol.run_round(r, shadow_in)

        out = proto.run_round(r, inputs)
        if adv.kind == Adversary.REPLAY and not replay_source and out.status == "Accepted":
            replay_source = {pid: quantize(v) for pid, v in out.noised.items()}

        report = verify_receipt(out.receipt_cid, proto.store, log) if audit else None
        result.outcomes.append(out)
        if report is not None:
            result.audits.append(report)
        result.records.append(_record(out, attackers, report, len(inputs.dropped)))
        if shadow_out is not None:
            result.sybil.append(_sybil_record(sc, out, shadow_out, honest[0].pid, attackers, bundle))
    return result


def _governance_step(result, log: PolicyLog, keys, bundle: PolicyBundle, r: int, at: int, pending):
    """Scripted attempts to shortcut the time-lock, then the legitimate path."""
    events = result.governance_events
    if r == at:
        raided = replace(bundle, novelty_econ=replace(bundle.novelty_econ, beta="0.9"))
        try:
            log.propose(raided, r, requested_activation=r + 1)
            events.append(f"round {r}: early proposal ACCEPTED (unexpected)")
        except LockPeriodError as exc:
            events.append(f"round {r}: early proposal rejected: LockPeriodError: {exc}")
        pending = log.propose(raided, r)
        events.append(f"round {r}: proposal queued for activation at round {pending.activation_round}")
        return pending
    if pending is None:
        return None
    approvals = sign_approvals(keys[:3], pending)
    if r < pending.activation_round:
        try:
            log.activate(pending, r, approvals)
            events.append(f"round {r}: premature activation ACCEPTED (unexpected)")
        except RevertError as exc:
            events.append(f"round {r}: premature activation rejected: RevertError: {exc}")
        return pending
    rec = log.activate(pending, r, approvals)
    events.append(f"round {r}: activated {rec.policy_cid} (proposed {rec.propose_round}, T_lock {rec.T_lock})")
    return None


def _reward_total(out: RoundOutcome, pids) -> Fraction:
    return sum((out.rewards[p].total.to_fraction() for p in pids if p in out.rewards), Fraction(0))


def _record(out: RoundOutcome, attackers: set[bytes], report: AuditReport | None, dropped: int) -> RoundRecord:
    receipt = out.receipt
    accepted = out.status == "Accepted"
    honest_ids = [p for p in out.rewards if p not in attackers]
    return RoundRecord(
        round_id=out.round_id,
        status=out.status,
        failure="" if accepted else receipt.failure_reason,
        phi=float(out.phi),
        phi_ema=float(out.phi_ema),
        phi_tilde=receipt.phi_t_ema if accepted else "",
        P_nov=receipt.P_nov if accepted else "0.0",
        included=len(out.included),
        dropped=dropped,
        rewards_honest=_reward_total(out, honest_ids),
        rewards_attacker=_reward_total(out, attackers),
        novelty_attacker=sum((out.rewards[p].r_nov.to_fraction() for p in attackers if p in out.rewards), Fraction(0)),
        fees=sum((f.to_fraction() for f in out.fees.values()), Fraction(0)),
        slashed=sum((s.amount.to_fraction() for s in receipt.slashes), Fraction(0)),
        gas_owned=out.gas_owned,
        gas_shared=out.gas_shared,
        audit_passed=report.verdict if report is not None else True,
    )


def _sybil_record(sc, split: RoundOutcome, whole: RoundOutcome, attacker: bytes, sybils, bundle) -> SybilRecord:
    same_perp = (
        split.g_perp is not None
        and whole.g_perp is not None
        and split.g_perp.tobytes() == whole.g_perp.tobytes()
    )
    cost = bundle.admission.min_stake.to_fraction() + to_fixed(sc.economy.attestation_cost).to_fraction()
    return SybilRecord(
        split.round_id,
        len(sybils),
        same_perp,
        split.phi == whole.phi,
        _reward_total(split, sybils),
        _reward_total(whole, [attacker]),
        cost,
    )
