"""Evaluation: structure matching, match rate / RMSE, validity, audits.

The matcher is a desk-scale stand-in for a full structure matcher: both
crystals must share the same (group, Wyckoff) assignment, rows are aligned
within each orbit slice, and the match is accepted when per-atom torus
distances and cell parameters agree within the thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import cell_parameters, k_to_L
from .sgdata import SpaceGroup
from .symmetry import Crystal, NotSymmetric, WyckoffAssignment, certify, is_constructable
from .torus import logmap, torus_distance


@dataclass(frozen=True)
class MatchThresholds:
    site: float = 0.03        # fractional units, per atom
    length_rel: float = 0.20  # relative cell-length deviation
    angle_deg: float = 5.0


@dataclass(frozen=True)
class MatchReport:
    matched: bool
    rmse: float | None
    permutation: np.ndarray | None
    orbit_residuals: list[float]


def _align_orbit(gen: np.ndarray, ref: np.ndarray, site_tol: float):
    """Greedy within-orbit alignment; returns (perm, per-atom distances) or None."""
    m = gen.shape[0]
    dist = np.linalg.norm(logmap(ref[None, :, :], gen[:, None, :]), axis=-1)
    perm = np.full(m, -1, dtype=int)
    taken = np.zeros(m, dtype=bool)
    for i in np.argsort(dist.min(axis=1)):
        choices = np.argsort(dist[i])
        j = next((j for j in choices if not taken[j]), None)
        if j is None or dist[i, j] > site_tol:
            return None
        taken[j] = True
        perm[i] = j
    return perm, dist[np.arange(m), perm]


def match(c_gen: Crystal, c_ref: Crystal, assignment: WyckoffAssignment,
          thresholds: MatchThresholds = MatchThresholds()) -> MatchReport:
    """Compare two crystals sharing an assignment.

    Matched iff every atom aligns within the site tolerance (allowing
    permutations within each orbit slice), cell lengths agree within the
    relative tolerance, and cell angles within the angle tolerance.
    """
    if c_gen.n != c_ref.n or assignment.n != c_gen.n:
        raise ValueError("crystals and assignment must agree on the atom count")
    len_g, ang_g = cell_parameters(k_to_L(c_gen.k))
    len_r, ang_r = cell_parameters(k_to_L(c_ref.k))
    # symmetric relative deviation keeps match(a, b) == match(b, a)
    rel = np.abs(len_g - len_r) / (0.5 * (len_g + len_r))
    cells_ok = rel.max() <= thresholds.length_rel and \
        np.abs(ang_g - ang_r).max() <= thresholds.angle_deg

    perm = np.empty(c_gen.n, dtype=int)
    residuals: list[float] = []
    sites_ok = True
    for sl in assignment.slices:
        res = _align_orbit(c_gen.F[sl], c_ref.F[sl], thresholds.site)
        if res is None:
            sites_ok = False
            residuals.append(float("nan"))
            continue
        orbit_perm, dists = res
        perm[sl] = orbit_perm + sl.start
        residuals.append(float(np.sqrt(np.mean(dists ** 2))))
    matched = bool(sites_ok and cells_ok)
    if not matched:
        return MatchReport(False, None, None, residuals)
    aligned = c_gen.F
    rmse = float(np.sqrt(np.mean(
        np.linalg.norm(logmap(c_ref.F[perm], aligned), axis=-1) ** 2)))
    return MatchReport(True, rmse, perm, residuals)


def match_rate(gen_set: list[Crystal], ref_set: list[Crystal],
               assignments: list[WyckoffAssignment],
               thresholds: MatchThresholds = MatchThresholds()) -> tuple[float, float]:
    """(match rate %, mean RMSE over matched pairs; NaN when nothing matches)."""
    if not (len(gen_set) == len(ref_set) == len(assignments)):
        raise ValueError("generated, reference, and assignment lists must align")
    reports = [match(g, r, a, thresholds) for g, r, a in zip(gen_set, ref_set, assignments)]
    matched = [r.rmse for r in reports if r.matched]
    mr = 100.0 * len(matched) / len(reports) if reports else 0.0
    mean_rmse = float(np.mean(matched)) if matched else float("nan")
    return mr, mean_rmse


def structural_validity(c: Crystal, min_dist: float = 0.5) -> bool:
    """All pairwise Cartesian distances (over the 3x3x3 image block) exceed min_dist."""
    L = k_to_L(c.k)
    n = c.F.shape[0]
    shifts = np.array([[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
    diff = c.F[:, None, :] - c.F[None, :, :]                     # (n, n, 3)
    images = diff[:, :, None, :] + shifts[None, None, :, :]      # (n, n, 27, 3)
    cart = images @ L
    dist = np.linalg.norm(cart, axis=-1)
    iu = np.triu_indices(n, k=1)
    off_diag = dist[iu].min() if n > 1 else np.inf
    # same-atom periodic images: exclude the zero shift
    self_images = dist[np.arange(n), np.arange(n)][:, shifts.any(axis=1)].min() if n else np.inf
    return bool(min(off_diag, self_images) > min_dist)


@dataclass(frozen=True)
class AuditReport:
    symmetric: bool
    constructable: bool
    valid: bool
    max_symmetry_residual: float
    orbit_type_constant: bool

    @property
    def passed(self) -> bool:
        return self.symmetric and self.constructable and self.valid and self.orbit_type_constant


def audit(c: Crystal, group: SpaceGroup, assignment: WyckoffAssignment,
          tol: float = 1e-6, min_dist: float = 0.5) -> AuditReport:
    """Bundle the symmetry, constructability, and validity checks."""
    try:
        cert = certify(c, group, assignment, tol=tol)
        moved = group.apply_all(c.F)
        resid = max(
            float(torus_distance(moved[gi], c.F[cert.perms[gi]]).max())
            for gi in range(group.order)
        )
        symmetric = True
    except NotSymmetric:
        symmetric, resid = False, float("nan")
    constructable, _ = is_constructable(c.F, assignment, tol=tol)
    valid = structural_validity(c, min_dist=min_dist) if group.dimension == 3 else True
    orbit_const = all(
        np.allclose(c.A[sl], c.A[sl][0]) for sl in assignment.slices
    )
    return AuditReport(symmetric, constructable, valid, resid, orbit_const)
