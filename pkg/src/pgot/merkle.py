"""Binary SHA-256 Merkle trees for payouts, weights and refunds.

Leaves are ``H(0x01 || payload)``, internal nodes ``H(left || right)`` and any
layer of odd width is padded by repeating its rightmost node.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .codec import sha256

VERSION_BYTE = b"\x01"
ZERO_ROOT = bytes(32)

SIBLING_RIGHT = 0
SIBLING_LEFT = 1


class EmptyTreeError(ValueError):
    pass


def leaf_hash(payload: bytes) -> bytes:
    return sha256(VERSION_BYTE + payload)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(left + right)


@dataclass(frozen=True)
class MerkleTree:
    layers: tuple[tuple[bytes, ...], ...]
    leaf_count: int

    @property
    def leaves(self) -> tuple[bytes, ...]:
        return self.layers[0][: self.leaf_count]

    @property
    def root(self) -> bytes:
        return self.layers[-1][0]

    @property
    def depth(self) -> int:
        return len(self.layers) - 1


def build_tree(leaf_payloads: list[bytes]) -> MerkleTree:
    if not leaf_payloads:
        raise EmptyTreeError("a Merkle tree needs at least one leaf")
    layer = [leaf_hash(p) for p in leaf_payloads]
    layers = []
    while len(layer) > 1:
        if len(layer) % 2:
            layer.append(layer[-1])
        layers.append(tuple(layer))
        layer = [node_hash(layer[i], layer[i + 1]) for i in range(0, len(layer), 2)]
    layers.append(tuple(layer))
    return MerkleTree(tuple(layers), len(leaf_payloads))


def merkle_root(leaf_payloads: list[bytes]) -> bytes:
    """Root of the payload list, or the all-zero sentinel when empty."""
    if not leaf_payloads:
        return ZERO_ROOT
    return build_tree(leaf_payloads).root


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    path: tuple[tuple[bytes, int], ...]

    def to_bytes(self) -> bytes:
        parts = [struct.pack(">Q", self.leaf_index)]
        for sibling, side in self.path:
            parts.append(sibling + bytes([side]))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> InclusionProof:
        if len(data) < 8 or (len(data) - 8) % 33:
            raise ValueError("malformed inclusion proof")
        (index,) = struct.unpack(">Q", data[:8])
        path = tuple(
            (data[i : i + 32], data[i + 32]) for i in range(8, len(data), 33)
        )
        return cls(index, path)


def prove(tree: MerkleTree, leaf_index: int) -> InclusionProof:
    if not 0 <= leaf_index < tree.leaf_count:
        raise IndexError(f"leaf index {leaf_index} out of range")
    path = []
    index = leaf_index
    for layer in tree.layers[:-1]:
        if index % 2:
            path.append((layer[index - 1], SIBLING_LEFT))
        else:
            path.append((layer[index + 1], SIBLING_RIGHT))
        index //= 2
    return InclusionProof(leaf_index, tuple(path))


def verify(root: bytes, leaf_payload: bytes, proof: InclusionProof) -> bool:
    node = leaf_hash(leaf_payload)
    for sibling, side in proof.path:
        if side == SIBLING_LEFT:
            node = node_hash(sibling, node)
        elif side == SIBLING_RIGHT:
            node = node_hash(node, sibling)
        else:
            return False
    return node == root
