"""Six-coefficient lattice representation and crystal-family masks.

A unit cell L (rows are lattice vectors) with positive volume decomposes as
L = Q exp(S) with Q orthogonal and S symmetric.  S is expanded in a fixed
orthogonal basis of six symmetric matrices, so the cell is carried around as
the rotation-invariant coefficient vector k in R^6.  Each crystal family
constrains which coefficients are free; the hexagonal family additionally
pins k1 to -log(3)/4, which fixes the 120-degree cell angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Orthogonal symmetric basis. Frobenius squared norms: 2, 2, 2, 2, 6, 3.
BASIS = np.array(
    [
        [[0, 1, 0], [1, 0, 0], [0, 0, 0]],
        [[0, 0, 1], [0, 0, 0], [1, 0, 0]],
        [[0, 0, 0], [0, 0, 1], [0, 1, 0]],
        [[1, 0, 0], [0, -1, 0], [0, 0, 0]],
        [[1, 0, 0], [0, 1, 0], [0, 0, -2]],
        [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    ],
    dtype=float,
)

BASIS_SQ_NORMS = np.array([2.0, 2.0, 2.0, 2.0, 6.0, 3.0])

HEXAGONAL_K1 = -math.log(3.0) / 4.0

FAMILIES = ("triclinic", "monoclinic", "orthorhombic", "tetragonal", "hexagonal", "cubic")


class SingularLattice(ValueError):
    """Raised when a cell matrix has non-positive or near-zero determinant."""


@dataclass(frozen=True)
class FamilyMask:
    """Binary free/frozen pattern over the six lattice coefficients.

    ``m[i] == 1`` means coefficient i is free; ``pinned`` maps frozen indices
    to fixed non-zero values (all other frozen coefficients are zero).
    """

    family: str
    m: np.ndarray
    pinned: dict = field(default_factory=dict)

    def apply(self, k: np.ndarray) -> np.ndarray:
        """Zero the frozen coefficients of k and restore pinned values."""
        out = np.asarray(k, dtype=float) * self.m
        for i, v in self.pinned.items():
            out[i] = v
        return out


_FAMILY_RANGES = (
    (1, 2, "triclinic"),
    (3, 15, "monoclinic"),
    (16, 74, "orthorhombic"),
    (75, 142, "tetragonal"),
    (143, 194, "hexagonal"),
    (195, 230, "cubic"),
)

_FAMILY_MASKS = {
    "triclinic": FamilyMask("triclinic", np.array([1, 1, 1, 1, 1, 1], dtype=float)),
    "monoclinic": FamilyMask("monoclinic", np.array([0, 1, 0, 1, 1, 1], dtype=float)),
    "orthorhombic": FamilyMask("orthorhombic", np.array([0, 0, 0, 1, 1, 1], dtype=float)),
    "tetragonal": FamilyMask("tetragonal", np.array([0, 0, 0, 0, 1, 1], dtype=float)),
    "hexagonal": FamilyMask(
        "hexagonal", np.array([0, 0, 0, 0, 1, 1], dtype=float), {0: HEXAGONAL_K1}
    ),
    "cubic": FamilyMask("cubic", np.array([0, 0, 0, 0, 0, 1], dtype=float)),
}


def family_of(number: int) -> str:
    """Crystal family of a 3D space group, from its number range."""
    for lo, hi, fam in _FAMILY_RANGES:
        if lo <= number <= hi:
            return fam
    raise ValueError(f"space group number out of range: {number}")


def mask_of(group) -> FamilyMask:
    """Lattice-coefficient mask for a 3D space group."""
    if group.dimension != 3:
        raise ValueError(f"lattice masks are defined for 3D groups, got dimension {group.dimension}")
    return _FAMILY_MASKS[family_of(group.number)]


def _sym_from_k(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return np.tensordot(k, BASIS, axes=(0, 0))


def k_to_L(k: np.ndarray) -> np.ndarray:
    """Cell matrix exp(sum_i k_i B_i); symmetric positive definite."""
    s = _sym_from_k(k)
    w, v = np.linalg.eigh(s)
    return (v * np.exp(w)) @ v.T


def L_to_k(L: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Recover (k, Q) from a cell matrix with L = Q exp(S).

    S = 0.5 * log(L^T L) by symmetric eigendecomposition; k holds the
    Frobenius projections of S onto the basis; Q = L exp(-S) is orthogonal.
    """
    L = np.asarray(L, dtype=float)
    det = np.linalg.det(L)
    if det <= tol:
        raise SingularLattice(f"cell determinant {det} is not positive")
    gram = L.T @ L
    w, v = np.linalg.eigh(gram)
    s = (v * (0.5 * np.log(w))) @ v.T
    k = np.tensordot(BASIS, s, axes=([1, 2], [0, 1])) / BASIS_SQ_NORMS
    q = L @ ((v * np.exp(-0.5 * np.log(w))) @ v.T)
    return k, q


def cell_parameters(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cell lengths (a, b, c) and angles (alpha, beta, gamma) in degrees."""
    L = np.asarray(L, dtype=float)
    lengths = np.linalg.norm(L, axis=1)

    def angle(i, j):
        c = L[i] @ L[j] / (lengths[i] * lengths[j])
        return math.degrees(math.acos(min(1.0, max(-1.0, c))))

    angles = np.array([angle(1, 2), angle(0, 2), angle(0, 1)])
    return lengths, angles
