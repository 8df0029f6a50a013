"""Geometric novelty: projection onto a rolling orthonormal basis of rewarded directions."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .codec import SCALE, schema

EPSILON = 1e-9
LAMBDA_EMA = 0.7
BASIS_SIZE = 20


class DimensionError(ValueError):
    pass


class ZeroNoveltyError(ValueError):
    pass


class RotationMode(str, Enum):
    INCREMENTAL = "incremental"
    FULL = "full"


@dataclass(frozen=True)
class NoveltyBasis:
    """Columns of ``matrix`` (d x m) are orthonormal; ``ages`` are insertion rounds."""

    dim: int
    matrix: np.ndarray = field(repr=False, compare=False)
    ages: tuple[int, ...] = ()
    basis_size: int = BASIS_SIZE
    mode: RotationMode = RotationMode.INCREMENTAL
    clock: int = 0

    @classmethod
    def empty(cls, dim: int, basis_size: int = BASIS_SIZE, mode: RotationMode = RotationMode.INCREMENTAL) -> NoveltyBasis:
        return cls(dim, np.zeros((dim, 0)), (), basis_size, RotationMode(mode))

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    @property
    def columns(self) -> list[np.ndarray]:
        return [self.matrix[:, i].copy() for i in range(self.size)]


@dataclass(frozen=True)
class NoveltyResult:
    g_parallel: np.ndarray = field(repr=False)
    g_perp: np.ndarray = field(repr=False)
    phi: float
    phi_ema: float | None = None


def _project_out(v: np.ndarray, B: np.ndarray) -> np.ndarray:
    # two Gram-Schmidt sweeps keep the residual orthogonal to ~machine precision
    for _ in range(2):
        v = v - B @ (B.T @ v)
    return v


def decompose(g, basis: NoveltyBasis) -> NoveltyResult:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (basis.dim,):
        raise DimensionError(f"expected vector of length {basis.dim}, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("novelty input must be finite")
    if basis.size == 0:
        g_perp = g.copy()
    else:
        g_perp = _project_out(g, basis.matrix)
    g_par = g - g_perp
    phi = float(np.linalg.norm(g_perp) / (np.linalg.norm(g) + EPSILON))
    return NoveltyResult(g_par, g_perp, min(phi, np.nextafter(1.0, 0.0)))


def _orthonormalize(B: np.ndarray) -> np.ndarray:
    out = np.zeros_like(B)
    for i in range(B.shape[1]):
        v = _project_out(B[:, i], out[:, :i])
        out[:, i] = v / np.linalg.norm(v)
    return out


def rotate_basis(basis: NoveltyBasis, g_perp) -> NoveltyBasis:
    """Evict the oldest column if full, then append the normalized direction."""
    g_perp = np.asarray(g_perp, dtype=np.float64)
    if g_perp.shape != (basis.dim,):
        raise DimensionError(f"expected vector of length {basis.dim}")
    norm = float(np.linalg.norm(g_perp))
    if norm < EPSILON:
        raise ZeroNoveltyError("no perpendicular component to add")
    B = basis.matrix
    ages = list(basis.ages)
    if basis.size >= basis.basis_size:
        drop = int(np.argmin(ages))
        B = np.delete(B, drop, axis=1)
        del ages[drop]
    u = _project_out(g_perp / norm, B)
    u = u / np.linalg.norm(u)
    B = np.column_stack([B, u])
    if basis.mode == RotationMode.FULL:
        B = _orthonormalize(B)
    ages.append(basis.clock)
    return NoveltyBasis(basis.dim, B, tuple(ages), basis.basis_size, basis.mode, basis.clock + 1)


def smooth(phi_prev_ema: float, phi_t: float, lam: float = LAMBDA_EMA) -> float:
    return lam * phi_prev_ema + (1.0 - lam) * phi_t


@dataclass
class NoveltyTracker:
    """Basis plus EMA state carried across rounds."""

    basis: NoveltyBasis
    phi_ema: float = 0.0
    lam: float = LAMBDA_EMA

    def observe(self, g) -> NoveltyResult:
        res = decompose(g, self.basis)
        self.phi_ema = smooth(self.phi_ema, res.phi, self.lam)
        if res.phi >= EPSILON:
            self.basis = rotate_basis(self.basis, res.g_perp)
        return NoveltyResult(res.g_parallel, res.g_perp, res.phi, self.phi_ema)


@schema("BasisCheckpoint")
@dataclass(frozen=True)
class BasisCheckpoint:
    dim: int
    basis_size: int
    mode: str
    ages: tuple
    columns: tuple  # per column, coordinates as 16-bit fixed-point integers


def checkpoint(basis: NoveltyBasis) -> BasisCheckpoint:
    cols = tuple(
        tuple(int(v) for v in np.floor(basis.matrix[:, i] * SCALE).astype(np.int64))
        for i in range(basis.size)
    )
    return BasisCheckpoint(basis.dim, basis.basis_size, basis.mode.value, basis.ages, cols)
