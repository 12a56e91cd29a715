"""Training (conditional flows, losses, optimizer) and Euler sampling.

Pairs (c0, c1) are mutually symmetric by construction: the prior draws its
coordinates through the same ordered Wyckoff maps that generated the data
crystal, so a single certificate covers c0, c1, and everything in between.
The loss regresses the symmetrized field onto the conditional velocities;
sampling integrates the field with explicit Euler steps, anti-annealed
velocity scaling, per-step coordinate wrapping, and per-step lattice
re-masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import prior as prior_mod
from .field import Backbone, FieldOutput, NonFinite, symmetrize, symmetrize_backward
from .lattice import FamilyMask, mask_of
from .sgdata import SpaceGroup, WyckoffPosition
from .symmetry import Crystal, NotSymmetric, SymmetryCertificate, WyckoffAssignment, certify
from .torus import geodesic, logmap, wrap


class SymmetryDrift(RuntimeError):
    """Generated crystal failed its final symmetry check (integrator/field bug)."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_k: float = 1.0
    lambda_F: float = 100.0
    lambda_A: float = 1.0
    lr: float = 5e-4
    lr_min: float = 1e-5
    batch_size: int = 16
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: str = "csp"              # "csp" or "dng"
    equivariant: bool = True
    prior_kind: str = "wyckoff"    # "wyckoff" or "uniform"
    s_F: float = 3.0               # anti-annealing slopes s(t) = 1 + s' t
    s_k: float = 3.0
    steps: int = 50                # Euler steps at generation time
    k_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda_k, self.lambda_F, self.lambda_A) <= 0:
            raise ValueError("loss weights must be positive")
        if self.mode not in ("csp", "dng"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.prior_kind not in ("wyckoff", "uniform"):
            raise ValueError(f"unknown prior {self.prior_kind!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class TrainingExample:
    """A data crystal with its conditioning; the unit stored in datasets."""

    crystal: Crystal               # c1; A is one-hot over h species
    group: SpaceGroup
    assignment: WyckoffAssignment
    certificate: SymmetryCertificate
    h: int

    @property
    def mask(self) -> FamilyMask | None:
        return mask_of(self.group) if self.group.dimension == 3 else None


@dataclass(frozen=True)
class TrainingPair:
    """A (c0, c1, t) triple ready for the loss; both ends share the certificate."""

    example: TrainingExample
    c0: Crystal
    t: float


def draw_pair(ex: TrainingExample, cfg: TrainConfig, rng: np.random.Generator) -> TrainingPair:
    """Sample c0 ~ p0(. | G, W, c1) and a uniform time."""
    if cfg.prior_kind == "wyckoff":
        F0, _ = prior_mod.sample_coords(ex.group, list(ex.assignment.positions), rng)
    else:
        F0 = rng.random((ex.crystal.n, 3))
    if ex.group.dimension == 3:
        k0 = prior_mod.sample_k(ex.group, rng, scale=cfg.k_scale)
    else:
        k0 = np.zeros(6)
    if cfg.mode == "dng":
        A0 = prior_mod.sample_atoms(ex.assignment, ex.h, rng)
    else:
        A0 = ex.crystal.A
    return TrainingPair(example=ex, c0=Crystal(k=k0, F=F0, A=A0), t=float(rng.random()))


def _atoms_for_mode(ex: TrainingExample, cfg: TrainConfig) -> np.ndarray:
    if cfg.mode == "dng":
        species = np.argmax(ex.crystal.A, axis=1)
        return prior_mod.encode_types(species, ex.h)
    return ex.crystal.A


def interpolate(pair: TrainingPair, cfg: TrainConfig) -> Crystal:
    """Crystal at time t on the conditional path from c0 to c1."""
    ex, t = pair.example, pair.t
    k_t = (1.0 - t) * pair.c0.k + t * ex.crystal.k
    F_t = geodesic(pair.c0.F, ex.crystal.F, t)
    A1 = _atoms_for_mode(ex, cfg)
    A_t = (1.0 - t) * pair.c0.A + t * A1 if cfg.mode == "dng" else A1
    return Crystal(k=k_t, F=F_t, A=A_t)


def targets(pair: TrainingPair, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Conditional velocities (v_k, v_F, v_A); constant in t."""
    ex = pair.example
    v_k = ex.crystal.k - pair.c0.k
    v_F = logmap(pair.c0.F, ex.crystal.F)
    if cfg.mode == "dng":
        v_A = _atoms_for_mode(ex, cfg) - pair.c0.A
    else:
        v_A = np.zeros((ex.crystal.n, 1))
    return v_k, v_F, v_A


def _field_at(backbone: Backbone, pair_crystal: Crystal, t: float, ex: TrainingExample,
              cfg: TrainConfig, want_cache: bool):
    mask = ex.mask
    k_mask = mask.m if mask is not None else None
    if cfg.equivariant:
        return symmetrize(backbone, pair_crystal, t, ex.certificate, k_mask=k_mask,
                          want_cache=want_cache)
    res = backbone.forward(pair_crystal, t, want_cache=want_cache)
    out, cache = res if want_cache else (res, None)
    if k_mask is not None:
        out = FieldOutput(u_k=out.u_k * k_mask, u_F=out.u_F, u_A=out.u_A)
    if want_cache:
        return out, (cache, k_mask)
    return out


def loss(batch: list[TrainingPair], backbone: Backbone, cfg: TrainConfig,
         grads: dict[str, np.ndarray] | None = None):
    """Batch loss with per-term breakdown; accumulates gradients if given.

    Each term is the mean squared residual over its entries, averaged over
    the batch; the total is the weight-combined sum.
    """
    terms = {"k": 0.0, "F": 0.0, "A": 0.0}
    B = len(batch)
    for pair in batch:
        ex = pair.example
        c_t = interpolate(pair, cfg)
        v_k, v_F, v_A = targets(pair, cfg)
        out, cache = _field_at(backbone, c_t, pair.t, ex, cfg, want_cache=True)
        r_k = out.u_k - v_k
        r_F = out.u_F - v_F
        r_A = out.u_A - v_A if cfg.mode == "dng" else np.zeros_like(out.u_A)
        terms["k"] += float(np.mean(r_k ** 2)) / B
        terms["F"] += float(np.mean(r_F ** 2)) / B
        terms["A"] += float(np.mean(r_A ** 2)) / B
        if grads is not None:
            du_k = cfg.lambda_k * 2.0 * r_k / r_k.size / B
            du_F = cfg.lambda_F * 2.0 * r_F / r_F.size / B
            du_A = (cfg.lambda_A * 2.0 * r_A / r_A.size / B if cfg.mode == "dng"
                    else np.zeros_like(out.u_A))
            if cfg.equivariant:
                symmetrize_backward(backbone, cache, du_k, du_F, du_A, grads)
            else:
                bcache, k_mask = cache
                raw_k = du_k if k_mask is None else du_k * k_mask
                backbone.backward(bcache, raw_k, du_F, du_A, grads)
    total = cfg.lambda_k * terms["k"] + cfg.lambda_F * terms["F"] + cfg.lambda_A * terms["A"]
    if not math.isfinite(total):
        raise NonFinite("loss is not finite")
    return total, terms


class Adam:
    """Moment-tracked adaptive optimizer over a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        cfg = self.cfg
        self.step_count += 1
        b1c = 1.0 - cfg.beta1 ** self.step_count
        b2c = 1.0 - cfg.beta2 ** self.step_count
        for key, g in grads.items():
            self.m[key] = cfg.beta1 * self.m[key] + (1.0 - cfg.beta1) * g
            self.v[key] = cfg.beta2 * self.v[key] + (1.0 - cfg.beta2) * g * g
            mhat = self.m[key] / b1c
            vhat = self.v[key] / b2c
            params[key] -= lr * mhat / (np.sqrt(vhat) + cfg.eps)


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    """Cosine decay from lr to lr_min over the configured epochs."""
    if cfg.epochs <= 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def train(dataset: list[TrainingExample], cfg: TrainConfig,
          backbone: Backbone | None = None):
    """Train the field; returns (backbone, metrics rows).

    Deterministic given the seed: initialization, batch order, prior draws,
    and times all flow from one generator.  Metrics rows are
    (epoch, L_k, L_F, L_A, total, lr).
    """
    rng = np.random.default_rng(cfg.seed)
    if backbone is None:
        from .field import BackboneConfig
        h = dataset[0].h
        a_in = dataset[0].crystal.A.shape[1] if cfg.mode == "csp" else prior_mod.atom_code_width(h)
        backbone = Backbone(
            BackboneConfig(a_in=a_in, a_out=prior_mod.atom_code_width(h)), rng=rng)
    opt = Adam(backbone.params, cfg)
    metrics: list[tuple] = []
    order = np.arange(len(dataset))
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg, epoch)
        rng.shuffle(order)
        sums = {"k": 0.0, "F": 0.0, "A": 0.0, "total": 0.0}
        nb = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [draw_pair(dataset[i], cfg, rng) for i in idx]
            grads = backbone.zero_grads()
            try:
                total, terms = loss(batch, backbone, cfg, grads=grads)
            except NonFinite as exc:
                raise NonFinite(f"non-finite loss in epoch {epoch}, batch {nb}") from exc
            opt.step(backbone.params, grads, lr)
            for key in ("k", "F", "A"):
                sums[key] += terms[key]
            sums["total"] += total
            nb += 1
        metrics.append((epoch, sums["k"] / nb, sums["F"] / nb, sums["A"] / nb,
                        sums["total"] / nb, lr))
    return backbone, metrics


def sample(backbone: Backbone, group: SpaceGroup, positions: list[WyckoffPosition],
           cfg: TrainConfig, rng: np.random.Generator, h: int = 2,
           fixed_A: np.ndarray | None = None, certify_tol: float = 1e-6):
    """Generate one crystal by Euler-integrating the (symmetrized) field.

    The certificate is computed once for c0 and reused at every step; the
    output is re-checked against it (and constructability) before returning.
    Structure-prediction mode requires ``fixed_A`` and never modifies it.
    """
    if cfg.mode == "csp" and fixed_A is None:
        raise ValueError("csp mode requires fixed atom types")
    ps = prior_mod.sample(group, positions, rng, h=h, atom_types=fixed_A,
                          k_scale=cfg.k_scale)
    crystal, cert, assignment = ps.crystal, ps.certificate, ps.assignment
    if cfg.prior_kind == "uniform":
        crystal = crystal.with_(F=rng.random((crystal.n, 3)))
    mask = mask_of(group) if group.dimension == 3 else None
    k_mask = mask.m if mask is not None else None
    N = cfg.steps
    dt = 1.0 / N
    for j in range(N):
        t = j / N
        if cfg.equivariant:
            out = _symmetrize_step(backbone, crystal, t, cert, k_mask)
        else:
            out = backbone.forward(crystal, t)
        F = wrap(crystal.F + dt * (1.0 + cfg.s_F * t) * out.u_F)
        if mask is not None:
            k = mask.apply(crystal.k + dt * (1.0 + cfg.s_k * t) * out.u_k)
        else:
            k = crystal.k
        A = crystal.A + dt * out.u_A if cfg.mode == "dng" else crystal.A
        crystal = Crystal(k=k, F=F, A=A)
    if cfg.mode == "dng":
        species = prior_mod.decode_types(crystal.A, h)
        onehot = np.eye(h)[species]
        crystal = crystal.with_(A=onehot)
    # A uniform start is not symmetric, so there is nothing to preserve.
    if cfg.equivariant and cfg.prior_kind == "wyckoff":
        try:
            final_cert = certify(crystal, group, assignment, tol=certify_tol)
        except NotSymmetric as exc:
            raise SymmetryDrift(f"sampled crystal lost its symmetry: {exc}") from exc
    else:
        final_cert = None
    return crystal, assignment, final_cert


def _symmetrize_step(backbone, crystal, t, cert, k_mask):
    return symmetrize(backbone, crystal, t, cert, k_mask=k_mask)
