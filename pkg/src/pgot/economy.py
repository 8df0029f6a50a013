"""Pool formation, the three-way split, rewards, fees, slashing, payouts and refunds.

Intermediate quantities are exact ``Fraction`` values; each amount that moves
is floored to the 2^-16 grid once, and whatever the floors leave behind is
carried as explicit dust so every round balances to the last unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from .codec import FixedAmount, floor_fixed, parse_ratio, schema, to_fixed
from .merkle import ZERO_ROOT, EmptyTreeError, MerkleTree, build_tree

BOOTSTRAP_INITIAL = to_fixed("50.0")
BOOTSTRAP_ROUNDS = 1000
EMA_ALPHA = parse_ratio("0.70")

RHO_MIN, RHO_MAX = Fraction(4, 5), Fraction(6, 5)
RHO_STEP_UP, RHO_STEP_DOWN = Fraction(1, 20), Fraction(1, 10)

NOVELTY_FLOOR = 1e-9
PHI_DIGITS = 9


class AllocationError(ValueError):
    pass


class InsolvencyError(ValueError):
    pass


class NoFeesError(RuntimeError):
    pass


class Fault(str, Enum):
    INVALID_PROOF = "InvalidProof"
    SELECTIVE_RECONSTRUCTION = "SelectiveReconstruction"
    LIVENESS_FAILURE = "LivenessFailure"

    @property
    def fraction(self) -> Fraction:
        return {
            Fault.INVALID_PROOF: Fraction(3, 10),
            Fault.SELECTIVE_RECONSTRUCTION: Fraction(1, 5),
            Fault.LIVENESS_FAILURE: Fraction(1, 10),
        }[self]


def as_ratio(x: str | Fraction | int) -> Fraction:
    return parse_ratio(x) if isinstance(x, str) else Fraction(x)


def phi_decimal(phi: float | Fraction | str) -> Fraction:
    """Truncate a novelty score to a fixed number of decimal digits.

    The truncated value has an exact, short decimal rendering, so anyone who
    parses the receipt string recovers the number the economics used.
    """
    if isinstance(phi, str):
        return parse_ratio(phi)
    value = Fraction(phi)
    unit = 10**PHI_DIGITS
    return Fraction(value.numerator * unit // value.denominator, unit)


def render_exact(value: Fraction) -> str:
    """Terminating decimal expansion of ``value`` (denominator 2^a 5^b)."""
    value = Fraction(value)
    digits = 0
    while (value * 10**digits).denominator != 1:
        digits += 1
        if digits > 80:
            raise ValueError(f"{value} has no short decimal expansion")
    whole = value * 10**digits
    text = str(whole.numerator).rjust(digits + 1, "0")
    head, tail = text[: len(text) - digits], text[len(text) - digits :]
    return f"{head}.{tail or '0'}"


# ---------------------------------------------------------------------------
# Pool formation and split
# ---------------------------------------------------------------------------


@schema("RoundPool")
@dataclass(frozen=True)
class RoundPool:
    P_receivers: FixedAmount
    P_bootstrap: FixedAmount
    P_total: FixedAmount
    bootstrap_active: bool
    ema_value: FixedAmount


def bootstrap_subsidy(round_id: int, initial: FixedAmount = BOOTSTRAP_INITIAL, horizon: int = BOOTSTRAP_ROUNDS) -> FixedAmount:
    if round_id >= horizon:
        return FixedAmount.ZERO
    return floor_fixed(initial.to_fraction() * (1 - Fraction(round_id, horizon)))


def form_pool(
    receiver_escrows: Sequence[FixedAmount],
    round_id: int,
    prev_ema: FixedAmount = FixedAmount.ZERO,
    bootstrap: FixedAmount | None = None,
) -> RoundPool:
    """``bootstrap`` overrides the linear schedule (used to pin worked examples)."""
    receivers = sum((e.raw for e in receiver_escrows), 0)
    p_receivers = FixedAmount(receivers)
    p_bootstrap = bootstrap_subsidy(round_id) if bootstrap is None else bootstrap
    ema = floor_fixed(EMA_ALPHA * prev_ema.to_fraction() + (1 - EMA_ALPHA) * p_receivers.to_fraction())
    return RoundPool(
        P_receivers=p_receivers,
        P_bootstrap=p_bootstrap,
        P_total=p_receivers + p_bootstrap,
        bootstrap_active=p_bootstrap.raw > 0,
        ema_value=ema,
    )


@schema("PoolAllocation")
@dataclass(frozen=True)
class PoolAllocation:
    alpha_C: str
    alpha_M: str
    alpha_T: str
    P_C: FixedAmount
    P_M: FixedAmount
    P_T: FixedAmount
    allocation_dust: FixedAmount


def split_pool(pool: RoundPool | FixedAmount, alphas: Sequence[str | Fraction] = ("0.70", "0.20", "0.10")) -> PoolAllocation:
    total = pool.P_total if isinstance(pool, RoundPool) else pool
    ratios = [as_ratio(a) for a in alphas]
    if len(ratios) != 3 or sum(ratios) != 1 or any(r < 0 for r in ratios):
        raise AllocationError(f"alphas {alphas} must be three nonnegative shares summing to 1")
    shares = [floor_fixed(total.to_fraction() * r) for r in ratios]
    dust = FixedAmount(total.raw - sum(s.raw for s in shares))
    labels = [a if isinstance(a, str) else render_exact(Fraction(a)) for a in alphas]
    return PoolAllocation(*labels, *shares, dust)


# ---------------------------------------------------------------------------
# Contributor rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardPools:
    base_total: Fraction
    novelty_cap: FixedAmount
    P_nov: FixedAmount
    P_quality: FixedAmount
    # unfloored values, kept for exact downstream distribution
    nov_exact: Fraction
    quality_exact: Fraction


def reward_pools(P_C: FixedAmount, N: int, r_base, beta, phi_ema) -> RewardPools:
    r_base, beta, phi = as_ratio(r_base), as_ratio(beta), as_ratio(phi_ema)
    base_total = N * r_base
    surplus = P_C.to_fraction() - base_total
    if surplus < 0:
        raise InsolvencyError(f"base rewards {float(base_total)} exceed P_C {P_C}")
    cap = beta * surplus
    nov = cap * phi
    quality = surplus - nov
    return RewardPools(base_total, floor_fixed(cap), floor_fixed(nov), floor_fixed(quality), nov, quality)


def novelty_factor(phi_t: float | Fraction, phi_ema: Fraction) -> Fraction:
    """EMA score used for payment, or zero when this round added no new direction."""
    return Fraction(0) if float(phi_t) < NOVELTY_FLOOR else Fraction(phi_ema)


@schema("ContributorReward")
@dataclass(frozen=True)
class ContributorReward:
    pid: bytes
    r_base_component: FixedAmount
    r_quality: FixedAmount
    r_nov: FixedAmount
    rho: Fraction

    @property
    def total(self) -> FixedAmount:
        return self.r_base_component + self.r_quality + self.r_nov


@dataclass(frozen=True)
class RewardSettlement:
    rewards: tuple[ContributorReward, ...]
    pools: RewardPools
    dust: FixedAmount


def contributor_rewards(
    P_C: FixedAmount,
    r_base,
    beta,
    phi_ema,
    reputations: Mapping[bytes, Fraction],
    novelty_shares: Mapping[bytes, Fraction],
) -> RewardSettlement:
    """``r_i = r_base*rho_i + r_quality_i + r_nov_i`` over the rewarded set.

    Quality is shared in proportion to reputation. Because the base line pays
    ``r_base*rho_i`` rather than a flat ``r_base``, the quality pot handed out is
    ``P_quality - r_base*(sum(rho) - N)`` so the contributor pool still balances.
    """
    N = len(reputations)
    r_base_q = as_ratio(r_base)
    pools = reward_pools(P_C, N, r_base_q, beta, phi_ema)
    if N == 0:
        return RewardSettlement((), pools, P_C)
    if set(novelty_shares) != set(reputations):
        raise ValueError("novelty shares and reputations must cover the same contributors")
    if sum(novelty_shares.values()) != 1:
        raise ValueError("novelty shares must sum to 1")
    rho_sum = sum(reputations.values(), Fraction(0))
    quality_pot = pools.quality_exact - r_base_q * (rho_sum - N)
    if quality_pot < 0:
        raise InsolvencyError("reputation-scaled base rewards exceed the contributor pool")
    rewards = []
    paid = 0
    # reputations and shares repeat across large populations; price each value once
    by_rho: dict[Fraction, tuple[FixedAmount, FixedAmount]] = {}
    by_share: dict[Fraction, FixedAmount] = {}
    for pid in sorted(reputations):
        rho = Fraction(reputations[pid])
        if rho not in by_rho:
            if not RHO_MIN <= rho <= RHO_MAX:
                raise ValueError(f"reputation {rho} outside [0.8, 1.2]")
            by_rho[rho] = (floor_fixed(r_base_q * rho), floor_fixed(quality_pot * rho / rho_sum))
        share = Fraction(novelty_shares[pid])
        if share not in by_share:
            by_share[share] = floor_fixed(pools.nov_exact * share)
        base, quality = by_rho[rho]
        rw = ContributorReward(pid, base, quality, by_share[share], rho)
        paid += rw.total.raw
        rewards.append(rw)
    return RewardSettlement(tuple(rewards), pools, FixedAmount(P_C.raw - paid))


def weight_shares(weights: Mapping[bytes, FixedAmount]) -> dict[bytes, Fraction]:
    total = sum(w.raw for w in weights.values())
    return {pid: Fraction(w.raw, total) for pid, w in weights.items()}


def committee_fees(P_M: FixedAmount, M: int, accepted: bool = True) -> tuple[FixedAmount, FixedAmount]:
    """Per-node fee and the remainder left as dust."""
    if not accepted:
        raise NoFeesError("committee fees are paid only for Accepted rounds")
    if M < 1:
        raise ValueError("need at least one fee recipient")
    fee = floor_fixed(P_M.to_fraction() / M)
    return fee, FixedAmount(P_M.raw - M * fee.raw)


def update_reputation(rho_prev: Fraction, success: bool, high_variance: bool = False) -> Fraction:
    rho = Fraction(rho_prev)
    if success:
        rho = min(RHO_MAX, rho + RHO_STEP_UP)
    if high_variance:
        rho = max(RHO_MIN, rho - RHO_STEP_DOWN)
    return min(RHO_MAX, max(RHO_MIN, rho))


# ---------------------------------------------------------------------------
# Payout trees, refunds, slashing
# ---------------------------------------------------------------------------


def payout_leaf(pid: bytes, amount: FixedAmount) -> bytes:
    return pid + amount.to_bytes()


def parse_payout_leaf(leaf: bytes) -> tuple[bytes, FixedAmount]:
    return leaf[:-16], FixedAmount.from_bytes(leaf[-16:])


@dataclass(frozen=True)
class PayoutTree:
    leaves: tuple[bytes, ...]
    tree: MerkleTree

    @property
    def root(self) -> bytes:
        return self.tree.root

    def index_of(self, pid: bytes) -> int:
        for i, leaf in enumerate(self.leaves):
            if leaf[:-16] == pid:
                return i
        raise KeyError(pid)


def build_payout_tree(payouts: Sequence[tuple[bytes, FixedAmount]]) -> PayoutTree:
    if not payouts:
        raise EmptyTreeError("payout tree needs at least one payout")
    leaves = tuple(payout_leaf(pid, amt) for pid, amt in sorted(payouts))
    return PayoutTree(leaves, build_tree(list(leaves)))


@schema("RefundSettlement")
@dataclass(frozen=True)
class RefundSettlement:
    refund_root: bytes
    refund_dust: FixedAmount
    bootstrap_reclaimed: FixedAmount
    leaves: tuple


def refunds(receiver_escrows: Sequence[tuple[bytes, FixedAmount]], P_bootstrap: FixedAmount = FixedAmount.ZERO) -> RefundSettlement:
    merged: dict[bytes, int] = {}
    for pid, amt in receiver_escrows:
        merged[pid] = merged.get(pid, 0) + amt.raw
    leaves = tuple(payout_leaf(pid, FixedAmount(raw)) for pid, raw in sorted(merged.items()))
    root = build_tree(list(leaves)).root if leaves else ZERO_ROOT
    return RefundSettlement(root, FixedAmount.ZERO, P_bootstrap, leaves)


@schema("SlashEvent")
@dataclass(frozen=True)
class SlashEvent:
    node_id: bytes
    fault: str
    amount: FixedAmount


def slash(stake: FixedAmount, fault: Fault | str, node_id: bytes = b"") -> tuple[SlashEvent, FixedAmount]:
    fault = Fault(fault)
    amount = floor_fixed(stake.to_fraction() * fault.fraction)
    return SlashEvent(node_id, fault.value, amount), stake - amount
