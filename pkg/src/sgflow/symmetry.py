"""Group actions on crystals, permutation certificates, and symmetry checkers.

A crystal is symmetric under its space group when every group element acts as
a row permutation of the atoms.  The certificate records that permutation per
element; it is computed once and reused by the efficient group-averaging
path and along flow trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .sgdata import AffineOp, SpaceGroup, WyckoffPosition
from .torus import logmap, torus_distance, wrap

CERTIFY_TOL = 1e-6


class NotSymmetric(ValueError):
    """A crystal violates its claimed space-group symmetry."""

    def __init__(self, message: str, op_index: int | None = None, row: int | None = None):
        super().__init__(message)
        self.op_index = op_index
        self.row = row


class StaleCertificate(ValueError):
    """A certificate no longer matches the crystal it is applied to."""


@dataclass(frozen=True)
class Crystal:
    """Lattice coefficients k (6,), fractional coordinates F (n, 3), types A (n, h)."""

    k: np.ndarray
    F: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float))
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        if self.F.ndim != 2 or self.F.shape[1] != 3:
            raise ValueError(f"F must be (n, 3), got {self.F.shape}")
        if self.A.shape[0] != self.F.shape[0]:
            raise ValueError("A and F must agree on the number of rows")

    @property
    def n(self) -> int:
        return self.F.shape[0]

    def with_(self, **kwargs) -> "Crystal":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class WyckoffAssignment:
    """Ordered Wyckoff positions covering contiguous row slices of F.

    Row j within a slice corresponds to map j of the position; this ordering
    convention is what makes a prior sample and a data crystal mutually
    symmetric.
    """

    positions: tuple[WyckoffPosition, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(self.positions))

    @property
    def n(self) -> int:
        return sum(p.multiplicity for p in self.positions)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for p in self.positions:
            out.append(slice(start, start + p.multiplicity))
            start += p.multiplicity
        return out

    def labels(self) -> list[str]:
        return [p.label for p in self.positions]

    def certificate(self, group: SpaceGroup) -> "SymmetryCertificate":
        """Exact certificate from the Wyckoff map structure alone.

        Valid for any crystal whose rows are built slice-by-slice in map
        order, independent of the generator points.
        """
        perms = np.empty((group.order, self.n), dtype=int)
        for pos, sl in zip(self.positions, self.slices):
            perms[:, sl] = pos.map_permutations(group) + sl.start
        return SymmetryCertificate(group=group, perms=perms)


@dataclass(frozen=True)
class SymmetryCertificate:
    """Row permutations sigma_g with g . c == sigma_g . c, one per element.

    ``perms[gi, i]`` is sigma_g(i): row i of g.F equals row sigma_g(i) of F.
    """

    group: SpaceGroup
    perms: np.ndarray

    @property
    def n(self) -> int:
        return self.perms.shape[1]

    def perm_of_inverse(self, gi: int) -> np.ndarray:
        return self.perms[self.group.inverse_index[gi]]

    def verify_homomorphism(self) -> bool:
        """Check perms[g1 o g2] == perms[g1] o perms[g2] for all pairs."""
        group = self.group
        for i, a in enumerate(group.ops):
            for j, b in enumerate(group.ops):
                k = group.index_of(a.compose(b))
                # (sigma_a o sigma_b)(r) = sigma_a(sigma_b(r))
                if not np.array_equal(self.perms[k], self.perms[i][self.perms[j]]):
                    return False
        return True

    def spot_check(self, crystal: Crystal, rng: np.random.Generator,
                   tol: float = CERTIFY_TOL) -> None:
        """Re-verify one random group element against the crystal."""
        gi = int(rng.integers(self.group.order))
        moved = wrap(crystal.F @ self.group.rotations[gi].T + self.group.translations[gi])
        if torus_distance(moved, crystal.F[self.perms[gi]]).max() >= tol:
            raise StaleCertificate(f"certificate fails on group element {gi}")


def act(g: AffineOp, c: Crystal) -> Crystal:
    """Apply a group element: rotate/translate F mod 1; k and A are untouched."""
    moved = wrap(c.F @ g.rotation_float().T + g.translation_float())
    return c.with_(F=moved)


def permute(sigma: np.ndarray, c: Crystal) -> Crystal:
    """Reorder rows of F and A identically: row i of the result is row sigma[i]."""
    sigma = np.asarray(sigma, dtype=int)
    if sigma.shape != (c.n,):
        raise ValueError(f"permutation length {sigma.shape} does not match n={c.n}")
    return c.with_(F=c.F[sigma], A=c.A[sigma])


def certify(c: Crystal, group: SpaceGroup, wa: WyckoffAssignment,
            tol: float = CERTIFY_TOL) -> SymmetryCertificate:
    """Compute the per-element row permutations witnessing G-symmetry.

    Matching is decomposed orbit-by-orbit using the assignment, vectorized
    over all group elements at once.  Ambiguity (two reference rows within
    tol of one moved row) is treated as failure: colliding atoms indicate a
    degenerate input.  Each matched permutation must also leave A invariant.
    """
    if wa.n != c.n:
        raise ValueError(f"assignment covers {wa.n} rows but crystal has {c.n}")
    all_moved = group.apply_all(c.F)  # (|G|, n, 3)
    perms = np.empty((group.order, c.n), dtype=int)
    for sl in wa.slices:
        ref = c.F[sl]
        m = ref.shape[0]
        moved = all_moved[:, sl]  # (|G|, m, 3)
        dist = np.linalg.norm(
            logmap(ref[None, None, :, :], moved[:, :, None, :]), axis=-1)
        nearest = dist.argmin(axis=2)  # (|G|, m)
        mins = np.take_along_axis(dist, nearest[..., None], axis=2)[..., 0]
        matched = mins < tol
        if m > 1:
            runner_up = dist.copy()
            np.put_along_axis(runner_up, nearest[..., None], np.inf, axis=2)
            matched &= runner_up.min(axis=2) >= tol  # unambiguous
            # a valid permutation hits every reference row exactly once
            collision = np.any(np.diff(np.sort(nearest, axis=1), axis=1) == 0, axis=1)
        else:
            collision = np.zeros(group.order, dtype=bool)
        bad = ~matched.all(axis=1) | collision
        if bad.any():
            gi = int(np.argmax(bad))
            raise NotSymmetric(
                f"group element {gi} has no row match in slice {sl} within {tol}",
                op_index=gi,
            )
        perms[:, sl] = nearest + sl.start
    type_ok = np.isclose(c.A[perms], c.A[None, :, :]).all(axis=(1, 2))
    if not type_ok.all():
        gi = int(np.argmin(type_ok))
        raise NotSymmetric(f"atom types not invariant under element {gi}", op_index=gi)
    return SymmetryCertificate(group=group, perms=perms)


def _recover_generator(pos: WyckoffPosition, rows: np.ndarray, tol: float,
                       max_iter: int = 12):
    """Recover x with w(x) == rows (in map order), or None.

    Solves V1 x + tau1 = rows[0] mod 1 by torus-aware least squares: free
    directions (null space of V1) are seeded from the observed row, then the
    residual is reduced iteratively with wrapped displacements.  The linear
    solve lives in R^3 while the data live on the torus, so the seed can land
    on the wrong branch (e.g. a site (x, -x) observed near x = 1/2 wraps to
    (x, 1 - x), shifting the estimate by 1/2); when that happens the seed is
    retried with sixth-of-a-cell offsets, which cover every branch the
    denominators 2 and 3 of the map matrices can introduce.
    """
    v1, tau1 = pos.V[0], pos.tau[0]
    pinv = np.linalg.pinv(v1)
    seed = wrap(pinv @ (rows[0] - tau1))
    # Null-space directions cannot be inferred from the image; take them from
    # the observed row (for identity-like maps this is a no-op).
    null_proj = np.eye(3) - pinv @ v1
    seed = wrap(seed + null_proj @ rows[0])

    def attempt(x):
        for _ in range(max_iter):
            resid = logmap(wrap(v1 @ x + tau1), rows[0])
            if np.linalg.norm(resid) < min(tol, 1e-12):
                break
            x = wrap(x + pinv @ resid)
        if torus_distance(pos.project(x), rows).max() < tol:
            return x
        return None

    x = attempt(seed)
    if x is not None:
        return x
    sixths = np.arange(6) / 6.0
    for da in sixths:
        for db in sixths:
            for dc in sixths:
                if da == db == dc == 0.0:
                    continue
                x = attempt(wrap(seed + np.array([da, db, dc])))
                if x is not None:
                    return x
    return None


def is_constructable(F: np.ndarray, wa: WyckoffAssignment,
                     tol: float = CERTIFY_TOL) -> tuple[bool, list[np.ndarray] | None]:
    """Whether F is exactly the slice-wise Wyckoff projection of some points.

    Returns (ok, witnesses); the witnesses are the recovered generator points
    x_i, one per assigned position, or None when the check fails.
    """
    F = np.asarray(F, dtype=float)
    if wa.n != F.shape[0]:
        raise ValueError(f"assignment covers {wa.n} rows but F has {F.shape[0]}")
    witnesses = []
    for pos, sl in zip(wa.positions, wa.slices):
        x = _recover_generator(pos, F[sl], tol)
        if x is None:
            return False, None
        witnesses.append(x)
    return True, witnesses
