"""Object-centric ledger: owner-signed registries, sequenced shared objects, gas.

Every accepted mutation is appended to an event log; replaying that log from
an empty ledger rebuilds the same state byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from .codec import Cid, FixedAmount, canonical_bytes, decode, schema
from .aggregation import ConsensusError
from .crypto import SigningKey, byzantine_bound, verify_signature

GAS_OWNED = Fraction(25, 10000)
GAS_SHARED = Fraction(1, 2)
DOLLARS_PER_GAS = Fraction(1, 1000)

OWNED_DOMAIN = b"PGOT-owned"
SHARED_DOMAIN = b"PGOT-shared"

MUTABLE_FIELDS = ("reputation", "stake", "epsilon_spent", "rounds_charged", "participation")


class AuthError(PermissionError):
    pass


class SharedKind(str, Enum):
    ROUND_REGISTRY = "RoundRegistry"
    MODEL_REGISTRY = "ModelRegistry"
    POLICY_ORACLE = "PolicyOracle"


@schema("ContributorRegistry")
@dataclass(frozen=True)
class ContributorRegistry:
    pid: bytes
    reputation: Fraction = Fraction(1)
    stake: FixedAmount = FixedAmount(0)
    epsilon_spent: float = 0.0
    rounds_charged: int = 0
    participation: tuple = ()
    version: int = 0


@schema("SharedObject")
@dataclass(frozen=True)
class SharedObject:
    kind: str
    version: int = 0
    payload: Cid | None = None
    lineage: tuple = ()


@dataclass
class GasMeter:
    owned_updates: int = 0
    shared_updates: int = 0

    @property
    def gas_units(self) -> Fraction:
        return GAS_OWNED * self.owned_updates + GAS_SHARED * self.shared_updates

    @property
    def dollars(self) -> Fraction:
        return DOLLARS_PER_GAS * self.gas_units

    def per_contributor(self, n: int) -> Fraction:
        return self.dollars / n if n else Fraction(0)


def round_gas_report(n_contributors: int, shared_updates: int) -> GasMeter:
    return GasMeter(n_contributors, shared_updates)


# -- signed messages ---------------------------------------------------------


def owned_message(pid: bytes, version: int, changes: Mapping[str, Any]) -> bytes:
    return OWNED_DOMAIN + canonical_bytes((pid, version, dict(changes)))


def shared_message(kind: str, version: int, payload: Cid) -> bytes:
    return SHARED_DOMAIN + canonical_bytes((kind, version, payload))


def sign_owned(key: SigningKey, registry: ContributorRegistry, changes: Mapping[str, Any]) -> bytes:
    return key.sign(owned_message(registry.pid, registry.version + 1, changes))


def sign_shared(keys: Sequence[SigningKey], obj: SharedObject, payload: Cid) -> dict[bytes, bytes]:
    msg = shared_message(obj.kind, obj.version + 1, payload)
    return {k.public: k.sign(msg) for k in keys}


# -- events ------------------------------------------------------------------


@schema("RegisterEvent")
@dataclass(frozen=True)
class RegisterEvent:
    registry: ContributorRegistry


@schema("OwnedWriteEvent")
@dataclass(frozen=True)
class OwnedWriteEvent:
    pid: bytes
    changes: dict
    signature: bytes


@schema("SharedWriteEvent")
@dataclass(frozen=True)
class SharedWriteEvent:
    kind: str
    payload: Cid
    committee: tuple
    approvals: dict


@schema("LedgerState")
@dataclass(frozen=True)
class LedgerState:
    registries: tuple
    shared: tuple
    owned_updates: int
    shared_updates: int


class Ledger:
    def __init__(self) -> None:
        self.registries: dict[bytes, ContributorRegistry] = {}
        self.shared: dict[str, SharedObject] = {k.value: SharedObject(k.value) for k in SharedKind}
        self.gas = GasMeter()
        self.events: list[Any] = []

    # registration is bookkeeping, not a metered write
    def register(self, registry: ContributorRegistry) -> ContributorRegistry:
        if registry.pid in self.registries:
            raise ValueError("contributor already registered")
        self.registries[registry.pid] = registry
        self.events.append(RegisterEvent(registry))
        return registry

    def owned_write(self, pid: bytes, changes: Mapping[str, Any], signature: bytes) -> ContributorRegistry:
        reg = self.registries.get(pid)
        if reg is None:
            raise KeyError(f"unknown contributor {pid.hex()[:16]}")
        bad = set(changes) - set(MUTABLE_FIELDS)
        if bad:
            raise ValueError(f"fields not writable: {sorted(bad)}")
        if not verify_signature(pid, signature, owned_message(pid, reg.version + 1, changes)):
            raise AuthError("owned write not signed by the registry owner")
        updated = replace(reg, **changes, version=reg.version + 1)
        self.registries[pid] = updated
        self.gas.owned_updates += 1
        self.events.append(OwnedWriteEvent(pid, dict(changes), signature))
        return updated

    def shared_write(
        self,
        kind: SharedKind | str,
        payload: Cid,
        approvals: Mapping[bytes, bytes],
        committee: Sequence[bytes],
    ) -> SharedObject:
        kind = SharedKind(kind).value
        obj = self.shared[kind]
        msg = shared_message(kind, obj.version + 1, payload)
        members = set(committee)
        good = sum(1 for node, sig in approvals.items() if node in members and verify_signature(node, sig, msg))
        need = 2 * byzantine_bound(len(committee)) + 1
        if good < need:
            raise ConsensusError(f"{good} valid approvals, need {need}")
        lineage = obj.lineage + (payload,) if kind == SharedKind.MODEL_REGISTRY.value else obj.lineage
        updated = SharedObject(kind, obj.version + 1, payload, lineage)
        self.shared[kind] = updated
        self.gas.shared_updates += 1
        self.events.append(SharedWriteEvent(kind, payload, tuple(committee), dict(approvals)))
        return updated

    def state(self) -> LedgerState:
        return LedgerState(
            registries=tuple(self.registries[p] for p in sorted(self.registries)),
            shared=tuple(self.shared[k] for k in sorted(self.shared)),
            owned_updates=self.gas.owned_updates,
            shared_updates=self.gas.shared_updates,
        )

    # -- persistence -------------------------------------------------------

    def log_bytes(self) -> bytes:
        return canonical_bytes(tuple(self.events))

    def save_log(self, path: str | Path) -> None:
        Path(path).write_bytes(self.log_bytes())

    @classmethod
    def replay(cls, events: Sequence[Any]) -> Ledger:
        ledger = cls()
        for ev in events:
            if isinstance(ev, RegisterEvent):
                ledger.register(ev.registry)
            elif isinstance(ev, OwnedWriteEvent):
                ledger.owned_write(ev.pid, ev.changes, ev.signature)
            elif isinstance(ev, SharedWriteEvent):
                ledger.shared_write(ev.kind, ev.payload, ev.approvals, ev.committee)
            else:
                raise ValueError(f"unknown ledger event {type(ev).__name__}")
        return ledger

    @classmethod
    def load_log(cls, path: str | Path) -> Ledger:
        return cls.replay(decode(Path(path).read_bytes()))
