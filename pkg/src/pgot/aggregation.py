"""Committee-side aggregation: DP, masking, node sums, dropouts, robust filter, proof.

Contributors are partitioned into cohorts, one per committee node. Pairwise
masks are drawn only inside a cohort, so each node can unmask its own weighted
cohort sum once dropped members' masks have been rebuilt from Shamir shares.
A contributor with fixed-point weight ``w`` submits ``x + w^-1 * mask`` so that
the masks still cancel in ``sum(w * v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .codec import SCALE, Cid, FixedAmount, cid_of, round_id_bytes, schema
from .crypto import (
    DEFAULT_PARAMS,
    FIELD_PRIME,
    Commitment,
    InsufficientSharesError,  # noqa: F401  re-exported for callers
    MaskSeed,
    PedersenParams,
    ShamirShare,
    SigningKey,
    byzantine_bound,
    combine,
    commit,
    dequantize,
    expand_mask,
    field_inverse,
    field_zeros,
    pairwise_mask,
    shamir_reconstruct,
    verify_signature,
)

COMMIT_DOMAIN = b"PGOT-commit"


class NumericError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


class WeightPolicyError(ValueError):
    pass


class DegenerateFilterError(ValueError):
    pass


class ForgeryError(ValueError):
    pass


class ConsensusError(RuntimeError):
    pass


class RobustMethod(str, Enum):
    NONE = "none"
    TRIMMED_MEAN = "trimmed_mean"
    MEDIAN = "median"


class ProofPath(str, Enum):
    HOMOMORPHIC = "homomorphic"
    ZK_SNARK = "zk_snark"  # reserved


# ---------------------------------------------------------------------------
# Differential privacy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DpConfig:
    epsilon_per_round: float = 1.0
    delta_global: float = 1e-6
    clipping_norm: float = 1.0
    noise_scale: float = 0.5
    epsilon_budget: float = 1000.0


_RDP_ORDERS = 1.0 + np.geomspace(1e-4, 1e5, 6000)


def clip_and_noise(update, cfg: DpConfig, rng: np.random.Generator | int) -> np.ndarray:
    x = np.asarray(update, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("update contains non-finite values")
    norm = float(np.linalg.norm(x))
    if norm > cfg.clipping_norm:
        x = x * (cfg.clipping_norm / norm)
    if cfg.noise_scale > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        x = x + rng.normal(0.0, cfg.noise_scale * cfg.clipping_norm, size=x.shape)
    return x


def rdp_epsilon(noise_scale: float, rounds: int, delta: float) -> float:
    """(eps, delta) after ``rounds`` Gaussian releases, via Renyi composition."""
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    if rounds == 0:
        return 0.0
    if noise_scale <= 0:
        return math.inf
    a = _RDP_ORDERS
    eps = rounds * a / (2.0 * noise_scale**2) + math.log(1.0 / delta) / (a - 1.0)
    return float(eps.min())


def account_privacy(cfg: DpConfig, rounds: int) -> float:
    eps = rdp_epsilon(cfg.noise_scale, rounds, cfg.delta_global)
    if eps > cfg.epsilon_budget:
        raise BudgetError(f"epsilon {eps:.3f} after {rounds} rounds exceeds budget {cfg.epsilon_budget}")
    return eps


# ---------------------------------------------------------------------------
# Masked updates and node sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightBounds:
    w_min: FixedAmount = FixedAmount(1)
    w_max: FixedAmount = FixedAmount(SCALE)

    def check(self, w: FixedAmount) -> None:
        if not self.w_min <= w <= self.w_max:
            raise WeightPolicyError(f"weight {w} outside [{self.w_min}, {self.w_max}]")


@dataclass(frozen=True)
class MaskedUpdate:
    contributor: bytes
    vector: np.ndarray = field(repr=False, compare=False)
    weight: FixedAmount
    cid: Cid


def mask_update(
    x: np.ndarray, weight: FixedAmount, owner: bytes, seeds: Sequence[MaskSeed]
) -> np.ndarray:
    """Field vector ``x + weight^-1 * pairwise_mask``."""
    if weight.raw == 0:
        raise WeightPolicyError("zero weight cannot carry a mask")
    mask = pairwise_mask(owner, list(seeds), len(x))
    return (x + field_inverse(weight.raw) * mask) % FIELD_PRIME


def make_masked_update(
    contributor: bytes, x: np.ndarray, weight: FixedAmount, seeds: Sequence[MaskSeed]
) -> MaskedUpdate:
    v = mask_update(x, weight, contributor, seeds)
    return MaskedUpdate(contributor, v, weight, cid_of(tuple(int(e) for e in v)))


def weighted_sum(updates: Sequence[MaskedUpdate], dim: int, bounds: WeightBounds = WeightBounds()) -> np.ndarray:
    total = field_zeros(dim)
    for u in updates:
        bounds.check(u.weight)
        if len(u.vector) != dim:
            raise ValueError("update dimension mismatch")
        total = (total + u.weight.raw * u.vector) % FIELD_PRIME
    return total


def commitment_message(round_id: int, commitment: Commitment) -> bytes:
    return COMMIT_DOMAIN + round_id_bytes(round_id) + commitment.to_bytes()


@dataclass(frozen=True)
class NodeLocalSum:
    node: bytes
    sum: np.ndarray = field(repr=False, compare=False)
    commitment: Commitment
    blinding: int = field(repr=False)
    signature: bytes

    def verify(self, round_id: int) -> bool:
        return verify_signature(self.node, self.signature, commitment_message(round_id, self.commitment))


def seal_local_sum(
    key: SigningKey,
    round_id: int,
    vector: np.ndarray,
    blinding: int,
    params: PedersenParams = DEFAULT_PARAMS,
) -> NodeLocalSum:
    c = commit(vector, blinding, params)
    return NodeLocalSum(key.public, vector, c, blinding, key.sign(commitment_message(round_id, c)))


def local_sum(
    updates: Sequence[MaskedUpdate],
    dim: int,
    key: SigningKey,
    round_id: int,
    blinding: int,
    correction: np.ndarray | None = None,
    bounds: WeightBounds = WeightBounds(),
    params: PedersenParams = DEFAULT_PARAMS,
) -> NodeLocalSum:
    """Weighted cohort sum, dropout-corrected, committed and signed."""
    s = weighted_sum(updates, dim, bounds)
    if correction is not None:
        s = (s + correction) % FIELD_PRIME
    return seal_local_sum(key, round_id, s, blinding, params)


# ---------------------------------------------------------------------------
# Dropout recovery
# ---------------------------------------------------------------------------


def dropout_set_commitment(dropped: Sequence[bytes]) -> Cid:
    return cid_of(tuple(sorted(dropped)))


def reconstruct_dropouts(
    dropped: Sequence[bytes],
    survivors: Sequence[bytes],
    shares: Mapping[tuple[bytes, bytes], Sequence[ShamirShare]],
    dim: int,
) -> tuple[np.ndarray, Cid]:
    """Correction that cancels the masks survivors drew against ``dropped``.

    ``shares`` maps a sorted pid pair to the shares of that pair's seed held by
    surviving committee nodes.
    """
    correction = field_zeros(dim)
    for k in dropped:
        for i in survivors:
            pair = (i, k) if i < k else (k, i)
            seed = shamir_reconstruct(list(shares.get(pair, ())))
            stream = expand_mask(seed, dim)
            # survivor i added +stream when k > i and -stream otherwise
            correction = correction - stream if k > i else correction + stream
    return correction % FIELD_PRIME, dropout_set_commitment(dropped)


# ---------------------------------------------------------------------------
# Byzantine-robust fallback
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregationPolicy:
    robust_method: RobustMethod = RobustMethod.TRIMMED_MEAN
    robust_alpha: float = 0.2
    robust_theta_percentile: float = 90.0
    history_window: int = 20
    min_history: int = 5


@dataclass(frozen=True)
class FilterResult:
    value: np.ndarray = field(repr=False, compare=False)
    method: RobustMethod
    statistic: float
    threshold: float | None


def dispersion(sums: np.ndarray) -> float:
    """Mean per-coordinate population variance across node sums."""
    return float(np.var(sums, axis=0).mean())


def trigger_threshold(history: Sequence[float], policy: AggregationPolicy) -> float | None:
    window = list(history)[-policy.history_window :]
    if len(window) < policy.min_history:
        return None
    return float(np.percentile(window, policy.robust_theta_percentile))


def trimmed_mean(values: np.ndarray, alpha: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    k = int(math.floor(alpha * n))
    if n < 2 * k + 1 or n == 0:
        raise DegenerateFilterError(f"{n} values cannot be trimmed by {k} per side")
    ordered = np.sort(values, axis=0)
    return ordered[k : n - k].mean(axis=0)


def byzantine_filter(
    node_sums: Sequence[NodeLocalSum] | np.ndarray,
    history: Sequence[float],
    policy: AggregationPolicy = AggregationPolicy(),
) -> FilterResult:
    """Per-coordinate robust mean of node sums when their dispersion spikes."""
    if isinstance(node_sums, np.ndarray) and node_sums.dtype != object:
        sums = node_sums.astype(np.float64)
    else:
        sums = np.array([dequantize(s.sum if isinstance(s, NodeLocalSum) else s) for s in node_sums])
    n = sums.shape[0]
    k = int(math.floor(policy.robust_alpha * n))
    if n < 2 * k + 1 or n == 0:
        raise DegenerateFilterError(f"{n} node sums, need at least {2 * k + 1}")
    stat = dispersion(sums)
    threshold = trigger_threshold(history, policy)
    method = RobustMethod.NONE
    if policy.robust_method != RobustMethod.NONE and threshold is not None and stat > threshold:
        method = policy.robust_method
    if method == RobustMethod.TRIMMED_MEAN:
        value = trimmed_mean(sums, policy.robust_alpha)
    elif method == RobustMethod.MEDIAN:
        value = np.median(sums, axis=0)
    else:
        value = sums.mean(axis=0)
    return FilterResult(value, method, stat, threshold)


# ---------------------------------------------------------------------------
# Sum integrity proof
# ---------------------------------------------------------------------------


@schema("NodeCommitment")
@dataclass(frozen=True)
class NodeCommitment:
    node: bytes
    commitment: bytes
    signature: bytes


@schema("SumIntegrityProof")
@dataclass(frozen=True)
class SumIntegrityProof:
    round_id: int
    node_commitments: tuple
    combined_commitment: bytes
    reconstructed_set_commitment: Cid
    robust_method_applied: str
    weights_root: bytes
    policy_cid: Cid
    excluded_nodes: tuple = ()
    variance_statistic: float = 0.0
    variance_threshold: float | None = None
    proof_path: str = ProofPath.HOMOMORPHIC.value


def weight_leaf(contributor: bytes, weight: FixedAmount) -> bytes:
    return contributor + weight.to_bytes()


def generate_proof(
    node_sums: Sequence[NodeLocalSum],
    reconstructed_set_commitment: Cid,
    method: RobustMethod,
    weights_root: bytes,
    policy_cid: Cid,
    round_id: int,
    committee_size: int,
    excluded_nodes: Sequence[bytes] = (),
    statistic: float = 0.0,
    threshold: float | None = None,
    path: ProofPath = ProofPath.HOMOMORPHIC,
) -> SumIntegrityProof:
    if path != ProofPath.HOMOMORPHIC:
        raise NotImplementedError("only the homomorphic proof path is implemented")
    seen: dict[bytes, bytes] = {}
    for s in node_sums:
        if not s.verify(round_id):
            raise ForgeryError(f"bad signature from node {s.node.hex()[:16]}")
        prior = seen.setdefault(s.node, s.commitment.to_bytes())
        if prior != s.commitment.to_bytes():
            raise ConsensusError(f"node {s.node.hex()[:16]} signed two commitments")
    quorum = 2 * byzantine_bound(committee_size) + 1
    if len(seen) < quorum:
        raise ConsensusError(f"{len(seen)} consistent node commitments, need {quorum}")
    ordered = sorted(node_sums, key=lambda s: s.node)
    return SumIntegrityProof(
        round_id=round_id,
        node_commitments=tuple(
            NodeCommitment(s.node, s.commitment.to_bytes(), s.signature) for s in ordered
        ),
        combined_commitment=combine([s.commitment for s in ordered]).to_bytes(),
        reconstructed_set_commitment=reconstructed_set_commitment,
        robust_method_applied=RobustMethod(method).value,
        weights_root=weights_root,
        policy_cid=policy_cid,
        excluded_nodes=tuple(sorted(excluded_nodes)),
        variance_statistic=float(statistic),
        variance_threshold=threshold,
        proof_path=path.value,
    )
