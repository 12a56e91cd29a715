"""Space groups and Wyckoff positions with exact rational arithmetic.

Group operations are stored as affine maps (R, tau) over small rationals and
composed mod 1, so closure, equality, and the per-element permutation tables
are computed without numerical drift.  Floating-point copies of the operator
matrices are cached on each group for the numeric code paths.

The shipped dataset (``data/groups_core.json``) covers all 17 wallpaper
groups (embedded in 3D with a trivial z action) plus representative 3D groups
spanning all six crystal families.  Every group and Wyckoff position is
re-verified at load time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .torus import torus_distance, wrap

DEFAULT_CLOSURE_CAP = 192
DEDUP_TOL = 1e-8

RationalMatrix = tuple[tuple[Fraction, ...], ...]
RationalVector = tuple[Fraction, ...]


class ClosureOverflow(RuntimeError):
    """Generator set failed to close within the cap (bad generator data)."""


class ParseError(ValueError):
    """Malformed group dataset file."""


class ConsistencyError(ValueError):
    """A loaded group or Wyckoff position violates its defining invariants."""


def _frac_mod1(x: Fraction) -> Fraction:
    return x - (x.numerator // x.denominator)


@dataclass(frozen=True)
class AffineOp:
    """Affine map f -> R f + tau acting on the torus, with exact entries."""

    rotation: RationalMatrix
    translation: RationalVector

    @staticmethod
    def make(rotation, translation) -> "AffineOp":
        rot = tuple(tuple(Fraction(v) for v in row) for row in rotation)
        tau = tuple(_frac_mod1(Fraction(v)) for v in translation)
        return AffineOp(rot, tau)

    @staticmethod
    def identity(dim: int = 3) -> "AffineOp":
        rot = tuple(
            tuple(Fraction(1 if i == j else 0) for j in range(dim)) for i in range(dim)
        )
        return AffineOp(rot, tuple(Fraction(0) for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.translation)

    def compose(self, other: "AffineOp") -> "AffineOp":
        """self after other: (R1, t1) o (R2, t2) = (R1 R2, R1 t2 + t1)."""
        r1, r2 = self.rotation, other.rotation
        n = self.dim
        rot = tuple(
            tuple(sum(r1[i][k] * r2[k][j] for k in range(n)) for j in range(n))
            for i in range(n)
        )
        tau = tuple(
            _frac_mod1(sum(r1[i][k] * other.translation[k] for k in range(n)) + self.translation[i])
            for i in range(n)
        )
        return AffineOp(rot, tau)

    def inverse(self) -> "AffineOp":
        n = self.dim
        rinv = _invert_rational(self.rotation)
        tau = tuple(
            _frac_mod1(-sum(rinv[i][k] * self.translation[k] for k in range(n)))
            for i in range(n)
        )
        return AffineOp(rinv, tau)

    def rotation_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.rotation])

    def translation_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.translation])

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Apply to a point or row-stack of points, wrapped into [0, 1)."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        out = wrap(np.atleast_2d(y) @ self.rotation_float().T + self.translation_float())
        return out[0] if single else out


def _invert_rational(rot: RationalMatrix) -> RationalMatrix:
    n = len(rot)
    aug = [[Fraction(rot[i][j]) for j in range(n)] + [Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            raise ValueError("rotation part is singular")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    return tuple(tuple(row[n:]) for row in aug)


def closure(generators: list[AffineOp], cap: int = DEFAULT_CLOSURE_CAP) -> list[AffineOp]:
    """Smallest composition-closed set containing the generators and identity.

    Ordering is deterministic: identity first, then breadth-first discovery
    order over left-multiplication by the generators.
    """
    if not generators:
        raise ValueError("generators must be nonempty")
    ident = AffineOp.identity(generators[0].dim)
    ops = [ident]
    seen = {ident}
    frontier = [ident]
    while frontier:
        new_frontier = []
        for op in frontier:
            for gen in generators:
                cand = gen.compose(op)
                if cand not in seen:
                    if len(ops) >= cap:
                        raise ClosureOverflow(
                            f"closure exceeded cap {cap}; generator data is suspect"
                        )
                    seen.add(cand)
                    ops.append(cand)
                    new_frontier.append(cand)
        frontier = new_frontier
    return ops


class SpaceGroup:
    """A finite group of affine torus isometries, ops[0] = identity."""

    def __init__(self, number: int, dimension: int, name: str, ops: list[AffineOp]):
        self.number = number
        self.dimension = dimension
        self.name = name
        self.ops = list(ops)
        self._index = {op: i for i, op in enumerate(self.ops)}
        self.rotations = np.stack([op.rotation_float() for op in self.ops])
        self.translations = np.stack([op.translation_float() for op in self.ops])
        self.inverse_index = np.array([self._index[op.inverse()] for op in self.ops])

    @property
    def order(self) -> int:
        return len(self.ops)

    def index_of(self, op: AffineOp) -> int:
        return self._index[op]

    def verify(self) -> None:
        """Brute-force group axioms: identity, closure, inverses."""
        if self.ops[0] != AffineOp.identity(self.ops[0].dim):
            raise ConsistencyError(f"group {self.name}: ops[0] is not the identity")
        for a in self.ops:
            if a.inverse() not in self._index:
                raise ConsistencyError(f"group {self.name}: missing inverse")
            for b in self.ops:
                if a.compose(b) not in self._index:
                    raise ConsistencyError(f"group {self.name}: not closed under composition")

    def apply_all(self, y: np.ndarray) -> np.ndarray:
        """Stack of g.y for every group element; shape (|G|, ..., 3)."""
        y = np.asarray(y, dtype=float)
        moved = np.einsum("gij,...j->g...i", self.rotations, y)
        if y.ndim == 1:
            return wrap(moved + self.translations)
        return wrap(moved + self.translations[:, None, :])

    def __repr__(self) -> str:
        return f"SpaceGroup({self.number}, dim={self.dimension}, {self.name!r}, order={self.order})"


class WyckoffPosition:
    """Ordered affine projection maps whose images form one group orbit."""

    def __init__(self, label: str, maps: list[tuple[RationalMatrix, RationalVector]],
                 parent: int, dimension: int):
        self.label = label
        self.maps = [
            (
                tuple(tuple(Fraction(x) for x in row) for row in v),
                tuple(_frac_mod1(Fraction(x)) for x in tau),
            )
            for v, tau in maps
        ]
        self.parent = parent
        self.dimension = dimension
        self.V = np.stack([[[float(x) for x in row] for row in v] for v, _ in self.maps])
        self.tau = np.stack([[float(x) for x in tau] for _, tau in self.maps])
        self._map_perms: np.ndarray | None = None

    @property
    def multiplicity(self) -> int:
        return len(self.maps)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Rows w_i(x) = wrap(V_i x + tau_i), in map order; shape (m, 3)."""
        x = np.asarray(x, dtype=float)
        return wrap(np.einsum("mij,j->mi", self.V, x) + self.tau)

    def map_permutations(self, group: SpaceGroup) -> np.ndarray:
        """Permutation table pi with g o maps[i] == maps[pi[g][i]], exactly.

        Row g gives the permutation of map indices induced by composing each
        map with the group element; this is independent of the generator
        point, so it doubles as the per-orbit block of every symmetry
        certificate for crystals built from this position.
        """
        if self._map_perms is not None:
            return self._map_perms
        key = {vt: i for i, vt in enumerate(self.maps)}
        perms = np.empty((group.order, self.multiplicity), dtype=int)
        for gi, op in enumerate(group.ops):
            n = op.dim
            for mi, (v, tau) in enumerate(self.maps):
                rv = tuple(
                    tuple(sum(op.rotation[i][k] * v[k][j] for k in range(n)) for j in range(n))
                    for i in range(n)
                )
                rt = tuple(
                    _frac_mod1(sum(op.rotation[i][k] * tau[k] for k in range(n)) + op.translation[i])
                    for i in range(n)
                )
                target = key.get((rv, rt))
                if target is None:
                    raise ConsistencyError(
                        f"Wyckoff {self.label} of group {self.parent}: map set is not "
                        f"stable under the group action"
                    )
                perms[gi, mi] = target
        self._map_perms = perms
        return perms

    def __repr__(self) -> str:
        return f"WyckoffPosition({self.label!r}, m={self.multiplicity}, parent={self.parent})"


def orbit(group: SpaceGroup, y: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Deduplicated orbit {g.y mod 1}; its size divides the group order."""
    points = group.apply_all(np.asarray(y, dtype=float))
    kept: list[np.ndarray] = []
    for p in points:
        if not any(torus_distance(p, q) < tol for q in kept):
            kept.append(p)
    return np.stack(kept)


def stabilizer(group: SpaceGroup, y: np.ndarray, tol: float = DEDUP_TOL) -> list[AffineOp]:
    """Site-symmetry subgroup {g : g.y == y}, closure-verified."""
    y = np.asarray(y, dtype=float)
    moved = group.apply_all(y)
    members = [op for op, p in zip(group.ops, moved) if torus_distance(p, y) < tol]
    index = set(members)
    for a in members:
        for b in members:
            if a.compose(b) not in index:
                raise ConsistencyError("stabilizer is not closed; tolerance too loose")
    return members


class GroupDataset:
    """Immutable collection of verified space groups and Wyckoff positions."""

    def __init__(self):
        self.groups: dict[tuple[int, int], SpaceGroup] = {}
        self.wyckoffs: dict[tuple[int, int], list[WyckoffPosition]] = {}

    def group(self, number: int, dimension: int = 3) -> SpaceGroup:
        return self.groups[(dimension, number)]

    def positions(self, number: int, dimension: int = 3) -> list[WyckoffPosition]:
        return self.wyckoffs[(dimension, number)]

    def position(self, number: int, label: str, dimension: int = 3) -> WyckoffPosition:
        for w in self.wyckoffs[(dimension, number)]:
            if w.label == label:
                return w
        raise KeyError(f"no Wyckoff position {label!r} in group {number} (dim {dimension})")

    def keys(self):
        return self.groups.keys()


def _parse_rational_pair(pair) -> Fraction:
    if (not isinstance(pair, (list, tuple))) or len(pair) != 2:
        raise ParseError(f"expected [numerator, denominator], got {pair!r}")
    return Fraction(int(pair[0]), int(pair[1]))


def _parse_matrix(flat, dim: int = 3) -> RationalMatrix:
    vals = [_parse_rational_pair(p) for p in flat]
    if len(vals) != dim * dim:
        raise ParseError(f"expected {dim * dim} rationals for a matrix, got {len(vals)}")
    return tuple(tuple(vals[i * dim + j] for j in range(dim)) for i in range(dim))


def _parse_vector(flat, dim: int = 3) -> RationalVector:
    vals = [_parse_rational_pair(p) for p in flat]
    if len(vals) != dim:
        raise ParseError(f"expected {dim} rationals for a vector, got {len(vals)}")
    return tuple(vals)


def load_dataset(path: str | Path, closure_cap: int = DEFAULT_CLOSURE_CAP,
                 verify_seed: int = 0) -> GroupDataset:
    """Load and verify a group dataset file.

    Every group is rebuilt from its generators via closure and checked for
    the group axioms; every Wyckoff position is checked to form a single
    G-orbit on one random generator point.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read group dataset {path}: {exc}") from exc
    if not isinstance(raw, dict) or "groups" not in raw:
        raise ParseError("top level must be an object with a 'groups' list")

    rng = np.random.default_rng(verify_seed)
    ds = GroupDataset()
    for entry in raw["groups"]:
        try:
            dim = int(entry["dimension"])
            number = int(entry["number"])
            name = str(entry["name"])
            gens = [
                AffineOp(_parse_matrix(g["rotation"]), _parse_vector(g["translation"]))
                for g in entry["generators"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed group entry: {exc}") from exc
        ops = closure(gens, cap=closure_cap)
        group = SpaceGroup(number, dim, name, ops)
        group.verify()
        key = (dim, number)
        ds.groups[key] = group
        ds.wyckoffs[key] = []
        for wraw in entry.get("wyckoffs", []):
            try:
                maps = [
                    (_parse_matrix(m["V"]), _parse_vector(m["tau"]))
                    for m in wraw["maps"]
                ]
                pos = WyckoffPosition(str(wraw["label"]), maps, number, dim)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed Wyckoff entry in group {name}: {exc}") from exc
            _verify_wyckoff(group, pos, rng)
            ds.wyckoffs[key].append(pos)
    return ds


def _verify_wyckoff(group: SpaceGroup, pos: WyckoffPosition, rng: np.random.Generator) -> None:
    # Exact check: the map set must be closed under the group action ...
    pos.map_permutations(group)
    # ... and the projected set of a random point must equal the orbit of
    # each of its elements.
    f = rng.random(group.ops[0].dim)
    rows = pos.project(f)
    orb = orbit(group, rows[0])
    ok = orb.shape[0] == pos.multiplicity and all(
        torus_distance(orb, row).min() < 1e-8 for row in rows
    )
    if not ok:
        raise ConsistencyError(
            f"Wyckoff {pos.label} of group {group.name}: projected set is not a single orbit"
        )


DATA_ENV_VAR = "SGFM_DATA_DIR"
CORE_DATASET = "groups_core.json"


def default_dataset_path() -> Path:
    """Bundled dataset path, overridable via the SGFM_DATA_DIR env var."""
    override = os.environ.get(DATA_ENV_VAR)
    if override:
        return Path(override) / CORE_DATASET
    return Path(resources.files("sgflow").joinpath("data", CORE_DATASET))


_default_cache: GroupDataset | None = None


def load_default() -> GroupDataset:
    """Load (and cache) the bundled, verified group dataset."""
    global _default_cache
    if _default_cache is None:
        _default_cache = load_dataset(default_dataset_path())
    return _default_cache
