"""Synthetic template benchmark: dataset generation, ablation, steps sweep.

Each template is a (group, Wyckoff assignment, species, mean geometry) tuple;
crystals are drawn by jittering the *generator points* (never the projected
rows, so every crystal sits exactly on its Wyckoff subspaces) and the masked
lattice coefficients.  Templates anchor one orbit at a fixed special position
so that absolute coordinates are recoverable from the translation-invariant
edge features.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import evalx, flow
from . import prior as prior_mod
from .lattice import mask_of
from .sgdata import GroupDataset, load_default
from .symmetry import Crystal, WyckoffAssignment, certify

TOY_H = 4  # species vocabulary across the toy templates

# Reference configuration for the toy benchmark, shared by the CLI and the
# test suite.  s_k = 0 because the lattice head already predicts a restoring
# velocity toward its k estimate; extra anti-annealing overshoots the cell.
# s_F = 1 keeps the coordinate sharpening mild enough that the result is
# insensitive to the Euler step count (s_F = 3 loses borderline cubic cells
# at fine discretizations).
TOY_CONFIG = flow.TrainConfig(epochs=400, batch_size=16, lr=2.5e-3,
                              k_scale=0.25, s_F=1.0, s_k=0.0, seed=0)


@dataclass(frozen=True)
class TemplateSpec:
    group: int
    labels: tuple[str, ...]
    points: tuple[tuple[float, float, float], ...]  # generator-point means
    species: tuple[int, ...]                        # one species per orbit
    k_mean: tuple[float, ...]                       # 6 lattice coefficients
    point_spread: float = 0.005
    k_spread: float = 0.02
    dimension: int = 3

    def __post_init__(self):
        if not (len(self.labels) == len(self.points) == len(self.species)):
            raise ValueError("labels, points, and species must align")
        if len(self.k_mean) != 6:
            raise ValueError("k_mean must have 6 entries")


# Three families (triclinic / tetragonal / cubic), each with a fixed-point
# anchor orbit plus one variable orbit.  The anchor makes absolute positions
# observable: without it, translated copies of a template are
# indistinguishable to the translation-invariant backbone.
TOY_TEMPLATES = (
    TemplateSpec(group=2, labels=("1a", "2i"),
                 points=((0.0, 0.0, 0.0), (0.31, 0.43, 0.17)),
                 species=(0, 1),
                 k_mean=(0.06, -0.05, 0.04, 0.05, 0.07, 1.6)),
    TemplateSpec(group=123, labels=("1a", "4j"),
                 points=((0.0, 0.0, 0.0), (0.30, 0.30, 0.0)),
                 species=(0, 2),
                 k_mean=(0.0, 0.0, 0.0, 0.0, 0.12, 1.55)),
    TemplateSpec(group=221, labels=("1a", "6e"),
                 points=((0.0, 0.0, 0.0), (0.31, 0.0, 0.0)),
                 species=(0, 3),
                 k_mean=(0.0, 0.0, 0.0, 0.0, 0.0, 1.65)),
)


def _build_template(spec: TemplateSpec, dataset: GroupDataset):
    group = dataset.group(spec.group, spec.dimension)
    positions = [dataset.position(spec.group, lab, spec.dimension) for lab in spec.labels]
    assignment = WyckoffAssignment(tuple(positions))
    cert = assignment.certificate(group)
    return group, positions, assignment, cert


def _species_onehot(spec: TemplateSpec, assignment, h: int) -> np.ndarray:
    A = np.zeros((assignment.n, h))
    for sl, sp in zip(assignment.slices, spec.species):
        A[sl, sp] = 1.0
    return A


def _draw_crystal(spec: TemplateSpec, group, positions, assignment, h: int,
                  rng: np.random.Generator) -> Crystal:
    rows = []
    for pos, mean in zip(positions, spec.points):
        x = np.asarray(mean) + spec.point_spread * rng.standard_normal(3)
        rows.append(pos.project(x))
    k = mask_of(group).apply(
        np.asarray(spec.k_mean) + spec.k_spread * rng.standard_normal(6))
    return Crystal(k=k, F=np.concatenate(rows, axis=0),
                   A=_species_onehot(spec, assignment, h))


def _mean_crystal(spec: TemplateSpec, group, positions, assignment, h: int) -> Crystal:
    rows = [pos.project(np.asarray(mean)) for pos, mean in zip(positions, spec.points)]
    return Crystal(k=mask_of(group).apply(np.asarray(spec.k_mean)),
                   F=np.concatenate(rows), A=_species_onehot(spec, assignment, h))


def _check_separable(specs, built, h: int) -> None:
    """Warn when two templates with identical conditioning collide under the matcher."""
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            if (specs[i].group, specs[i].labels) != (specs[j].group, specs[j].labels):
                continue
            grp_i, pos_i, asg_i, _ = built[i]
            a = _mean_crystal(specs[i], grp_i, pos_i, asg_i, h)
            b = _mean_crystal(specs[j], built[j][0], built[j][1], built[j][2], h)
            if evalx.match(a, b, asg_i).matched:
                warnings.warn(
                    f"templates {i} and {j} (group {specs[i].group}) overlap "
                    "within matcher thresholds; held-out match rates will blur",
                    stacklevel=3,
                )


def make_dataset(specs=TOY_TEMPLATES, n_per_template: int = 112, seed: int = 0,
                 dataset: GroupDataset | None = None,
                 h: int | None = None) -> dict[str, list[flow.TrainingExample]]:
    """Draw crystals around each template and split 60/20/20 deterministically.

    Examples are interleaved round-robin across templates before splitting so
    every split sees every template.
    """
    dataset = dataset or load_default()
    if h is None:
        h = max(max(s.species) for s in specs) + 1
    built = [_build_template(s, dataset) for s in specs]
    _check_separable(specs, built, h)
    rng = np.random.default_rng(seed)
    per_template: list[list[flow.TrainingExample]] = []
    for spec, (group, positions, assignment, cert) in zip(specs, built):
        examples = []
        for _ in range(n_per_template):
            crystal = _draw_crystal(spec, group, positions, assignment, h, rng)
            certify(crystal, group, assignment, tol=1e-8)  # invariant, not a hope
            examples.append(flow.TrainingExample(
                crystal=crystal, group=group, assignment=assignment,
                certificate=cert, h=h))
        per_template.append(examples)
    interleaved = [ex for triple in zip(*per_template) for ex in triple]
    n = len(interleaved)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return {
        "train": interleaved[:n_train],
        "val": interleaved[n_train:n_train + n_val],
        "test": interleaved[n_train + n_val:],
    }


def evaluate_csp(backbone, test: list[flow.TrainingExample], cfg: flow.TrainConfig,
                 seed: int = 0, steps: int | None = None) -> tuple[float, float]:
    """Sample one structure per held-out crystal and report (MR %, mean RMSE)."""
    if steps is not None:
        cfg = replace(cfg, steps=steps)
    rng = np.random.default_rng(seed)
    gen, refs, assignments = [], [], []
    for ex in test:
        crystal, assignment, _ = flow.sample(
            backbone, ex.group, list(ex.assignment.positions), cfg, rng,
            h=ex.h, fixed_A=ex.crystal.A)
        gen.append(crystal)
        refs.append(ex.crystal)
        assignments.append(assignment)
    return evalx.match_rate(gen, refs, assignments)


ABLATION_GRID = (
    # Table-style 2x2 minus the never-run cell (equivariant + uniform prior).
    ("equivariant+wyckoff", True, "wyckoff"),
    ("plain+wyckoff", False, "wyckoff"),
    ("plain+uniform", False, "uniform"),
)


def run_ablation(splits: dict[str, list[flow.TrainingExample]],
                 base_cfg: flow.TrainConfig, seeds=(0, 1, 2),
                 eval_seed: int = 100) -> list[tuple]:
    """Train each grid cell per seed; rows are (name, equivariant, prior, seed, MR, RMSE)."""
    rows = []
    for name, equi, prior_kind in ABLATION_GRID:
        for seed in seeds:
            cfg = replace(base_cfg, equivariant=equi, prior_kind=prior_kind, seed=seed)
            backbone, _ = flow.train(splits["train"], cfg)
            mr, rmse = evaluate_csp(backbone, splits["test"], cfg, seed=eval_seed)
            rows.append((name, equi, prior_kind, seed, mr, rmse))
    return rows


def run_steps_sweep(splits: dict[str, list[flow.TrainingExample]], backbone,
                    cfg: flow.TrainConfig, step_counts=(1, 10, 50, 100, 500),
                    eval_seed: int = 100) -> list[tuple]:
    """Evaluate a trained field at several Euler step counts; rows (N, MR, RMSE).

    The evaluation generator is re-seeded per step count so every N sees the
    same prior draws.
    """
    rows = []
    for n_steps in step_counts:
        mr, rmse = evaluate_csp(backbone, splits["test"], cfg, seed=eval_seed,
                                steps=n_steps)
        rows.append((n_steps, mr, rmse))
    return rows
