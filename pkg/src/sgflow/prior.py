"""The symmetry-constrained noise distribution p0(. | G, W).

Coordinates are sampled by drawing one uniform generator point per Wyckoff
position and projecting it through the position's maps, so every sample is
constructable (and therefore symmetric) by construction.  Lattice noise is a
masked standard normal with family-pinned components restored.  Atom-type
noise (de novo mode) is drawn once per orbit and broadcast to its rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import FamilyMask, mask_of
from .sgdata import SpaceGroup, WyckoffPosition
from .symmetry import Crystal, SymmetryCertificate, WyckoffAssignment


class WyckoffMismatch(ValueError):
    """A requested Wyckoff position does not belong to the given group."""


@dataclass(frozen=True)
class PriorSample:
    crystal: Crystal
    assignment: WyckoffAssignment
    certificate: SymmetryCertificate
    rng_seed: int | None = None


def sample_coords(group: SpaceGroup, positions: list[WyckoffPosition],
                  rng: np.random.Generator) -> tuple[np.ndarray, WyckoffAssignment]:
    """Draw constructable coordinates: one uniform point per position, projected.

    Rows are emitted slice-by-slice in map order, which fixes the pairing
    convention shared with data crystals.
    """
    for pos in positions:
        if pos.parent != group.number or pos.dimension != group.dimension:
            raise WyckoffMismatch(
                f"position {pos.label} belongs to group {pos.parent} "
                f"(dim {pos.dimension}), not {group.number} (dim {group.dimension})"
            )
    rows = []
    for pos in positions:
        x = rng.random(3)
        rows.append(pos.project(x))
    assignment = WyckoffAssignment(tuple(positions))
    return np.concatenate(rows, axis=0), assignment


def sample_k(group: SpaceGroup, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Masked Gaussian lattice coefficients with pinned values restored."""
    mask = mask_of(group)
    return mask.apply(scale * rng.standard_normal(6))


def atom_code_width(h: int) -> int:
    """Width of the +/-1 binary atom-type encoding for h species."""
    return max(1, int(np.ceil(np.log2(h))))


def encode_types(species: np.ndarray, h: int) -> np.ndarray:
    """One-hot species indices -> {-1, +1} binary code matrix (n, ceil(log2 h))."""
    width = atom_code_width(h)
    species = np.asarray(species, dtype=int)
    bits = (species[:, None] >> np.arange(width)[None, :]) & 1
    return 2.0 * bits - 1.0


def decode_types(code: np.ndarray, h: int) -> np.ndarray:
    """Sign-decode a continuous code matrix back to species indices (clipped to h-1)."""
    bits = (np.sign(code) > 0).astype(int)
    vals = (bits * (1 << np.arange(bits.shape[1]))[None, :]).sum(axis=1)
    return np.minimum(vals, h - 1)


def sample_atoms(assignment: WyckoffAssignment, h: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Per-orbit Gaussian atom-type noise, broadcast to each orbit's rows."""
    width = atom_code_width(h)
    blocks = []
    for pos in assignment.positions:
        draw = rng.standard_normal(width)
        blocks.append(np.tile(draw, (pos.multiplicity, 1)))
    return np.concatenate(blocks, axis=0)


def sample(group: SpaceGroup, positions: list[WyckoffPosition], rng: np.random.Generator,
           h: int = 2, atom_types: np.ndarray | None = None, k_scale: float = 1.0,
           seed: int | None = None) -> PriorSample:
    """Full prior draw c0 with its (exact) certificate.

    ``atom_types`` fixes A (structure-prediction mode, one-hot); otherwise
    atom-type noise is sampled in the binary encoding (de novo mode).
    """
    F0, assignment = sample_coords(group, positions, rng)
    # Wallpaper groups carry no lattice-coefficient family; use a fixed cell.
    k0 = sample_k(group, rng, scale=k_scale) if group.dimension == 3 else np.zeros(6)
    if atom_types is not None:
        A0 = np.asarray(atom_types, dtype=float)
        if A0.shape[0] != assignment.n:
            raise ValueError("atom_types rows must match the assignment size")
    else:
        A0 = sample_atoms(assignment, h, rng)
    crystal = Crystal(k=k0, F=F0, A=A0)
    cert = assignment.certificate(group)
    return PriorSample(crystal=crystal, assignment=assignment, certificate=cert, rng_seed=seed)
