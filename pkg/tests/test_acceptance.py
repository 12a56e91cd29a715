"""Acceptance criteria for the symmetry-preserving crystal flow package.

Each test covers one shipped guarantee at its stated tolerance and prints a
single summary line.  The slow fixtures (toy benchmark training, ablation
grid) are session-scoped so the expensive work happens once.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from sgflow import evalx, flow, io as sgio, prior, synthbench
from sgflow.field import Backbone, BackboneConfig, naive_ga, symmetrize
from sgflow.lattice import (
    HEXAGONAL_K1,
    cell_parameters,
    family_of,
    k_to_L,
    L_to_k,
    mask_of,
)
from sgflow.sgdata import load_default
from sgflow.symmetry import Crystal, certify, is_constructable
from sgflow.torus import geodesic, logmap, wrap


@pytest.fixture(scope="session")
def ds():
    return load_default()


def _random_heads_backbone(a_in=4, a_out=2, scale=0.01, seed=0):
    bb = Backbone(BackboneConfig(a_in=a_in, a_out=a_out),
                  rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for name in ("head_k2_w", "head_F_w", "head_A_w"):
        bb.params[name] = scale * rng.standard_normal(bb.params[name].shape)
    return bb


def _random_certified_crystal(ds, dim, num, rng, max_mult):
    group = ds.group(num, dim)
    candidates = [p for p in ds.positions(num, dim) if p.multiplicity <= max_mult]
    positions = [candidates[int(rng.integers(len(candidates)))]]
    atom_types = np.eye(4)[rng.integers(4, size=sum(p.multiplicity for p in positions))]
    # every row of an orbit carries the same species
    start = 0
    for p in positions:
        atom_types[start:start + p.multiplicity] = atom_types[start]
        start += p.multiplicity
    s = prior.sample(group, positions, rng, h=4, atom_types=atom_types, k_scale=0.3)
    cert = certify(s.crystal, group, s.assignment, tol=1e-8)
    return group, s.crystal, s.assignment, cert


# -- 1. efficient group averaging equals the brute-force reference -----------


def test_criterion_1_group_averaging_equivalence(ds):
    bb = _random_heads_backbone()
    rng = np.random.default_rng(0)
    worst = 0.0
    for dim, num in sorted(ds.keys()):
        group = ds.group(num, dim)
        max_mult = 8 if group.order >= 96 else 24
        for _ in range(50):
            group, crystal, assignment, cert = _random_certified_crystal(
                ds, dim, num, rng, max_mult)
            t = float(rng.random())
            eff = symmetrize(bb, crystal, t, cert)
            ref = naive_ga(bb, crystal, t, group)
            diff = max(np.abs(eff.u_F - ref.u_F).max(),
                       np.abs(eff.u_k - ref.u_k).max(),
                       np.abs(eff.u_A - ref.u_A).max())
            worst = max(worst, diff)
    assert worst < 1e-9
    print(f"\ncriterion 1 (GA equivalence): pass, max |diff| {worst:.3e} "
          f"over 50 crystals x {len(list(ds.keys()))} groups")


# -- 2. one call instead of |G|, with the matching wall-time win -------------


@pytest.mark.parametrize("number,label", [(123, "16u"), (221, "48n")])
def test_criterion_2_group_averaging_efficiency(ds, number, label):
    group = ds.group(number)
    pos = next(p for p in ds.positions(number, 3) if p.label == label)
    assert group.order >= 16 and pos.multiplicity >= 16
    bb = _random_heads_backbone(a_in=2, a_out=1)
    rng = np.random.default_rng(number)
    s = prior.sample(group, [pos], rng, h=2,
                     atom_types=np.eye(2)[np.zeros(pos.multiplicity, int)])
    t_eff = t_naive = float("inf")
    for _ in range(5):
        bb.calls = 0
        t0 = time.perf_counter()
        symmetrize(bb, s.crystal, 0.5, s.certificate)
        t_eff = min(t_eff, time.perf_counter() - t0)
        eff_calls = bb.calls
        bb.calls = 0
        t0 = time.perf_counter()
        naive_ga(bb, s.crystal, 0.5, group)
        t_naive = min(t_naive, time.perf_counter() - t0)
        naive_calls = bb.calls
    assert eff_calls == 1
    assert naive_calls == group.order
    speedup = t_naive / t_eff
    assert speedup >= group.order / 4
    print(f"\ncriterion 2 (GA efficiency, {group.name}): pass, "
          f"calls 1 vs {naive_calls}, speedup x{speedup:.1f} "
          f"(required x{group.order / 4:.1f})")


# -- 3. symmetry holds at every step of the integration ----------------------


def test_criterion_3_symmetry_along_trajectories(ds):
    # symmetry preservation is a property of the averaging/integration
    # machinery, not of trunk capacity; a slim backbone keeps the walltime
    # budget comfortable
    bb = Backbone(BackboneConfig(d=32, d_t=16, d_s=12, layers=2, a_in=4, a_out=2),
                  rng=np.random.default_rng(0))
    rng0 = np.random.default_rng(1)
    for name in ("head_k2_w", "head_F_w", "head_A_w"):
        bb.params[name] = 0.01 * rng0.standard_normal(bb.params[name].shape)
    t0 = time.time()
    n_checks = 0
    for dim, num in sorted(ds.keys()):
        group = ds.group(num, dim)
        pos = min((p for p in ds.positions(num, dim) if p.multiplicity > 1),
                  default=ds.positions(num, dim)[0],
                  key=lambda p: p.multiplicity)
        mask = mask_of(group) if dim == 3 else None
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s = prior.sample(group, [pos], rng, h=4,
                             atom_types=np.eye(4)[np.zeros(pos.multiplicity, int)])
            crystal = s.crystal
            N = 100
            for j in range(N):
                t = j / N
                out = symmetrize(bb, crystal, t, s.certificate,
                                 k_mask=mask.m if mask else None)
                F = wrap(crystal.F + (1.0 / N) * (1.0 + t) * out.u_F)
                k = mask.apply(crystal.k + (1.0 / N) * out.u_k) if mask else crystal.k
                crystal = crystal.with_(F=F, k=k)
                certify(crystal, group, s.assignment, tol=1e-6)
                ok, _ = is_constructable(crystal.F, s.assignment, tol=1e-6)
                assert ok, (dim, num, seed, j)
                n_checks += 1
    elapsed = time.time() - t0
    assert elapsed < 60.0
    print(f"\ncriterion 3 (trajectory symmetry): pass, {n_checks} step checks "
          f"across {len(list(ds.keys()))} groups x 20 seeds in {elapsed:.1f}s")


# -- 4. the prior is exactly symmetric ---------------------------------------


def test_criterion_4_prior_symmetry(ds):
    keys = sorted(ds.keys())
    rng = np.random.default_rng(4)
    n_checked = 0
    for i in range(1000):
        dim, num = keys[i % len(keys)]
        group = ds.group(num, dim)
        positions = list(ds.positions(num, dim))
        rng.shuffle(positions)
        chosen = [p for p in positions[:2] if p.multiplicity <= 48] or positions[:1]
        s = prior.sample(group, chosen, rng, h=4)  # de novo: noisy atom codes
        certify(s.crystal, group, s.assignment, tol=1e-8)
        for sl in s.assignment.slices:
            block = s.crystal.A[sl]
            for row in block:
                assert np.array_equal(row, block[0])  # bitwise orbit-constant
        n_checked += 1
    assert n_checked == 1000
    print("\ncriterion 4 (prior symmetry): pass, 1000 samples certified at 1e-8, "
          "atom noise bitwise constant per orbit")


# -- 5. geometry: torus calculus, lattice coordinates, family masks ----------


def test_criterion_5_geometry_suite(ds):
    rng = np.random.default_rng(5)
    # torus logmap: identity, range, antisymmetry off the branch cut
    x, y = rng.random((2, 2000, 3))
    assert np.all(logmap(x, x) == 0.0)
    v = logmap(x, y)
    assert np.all(v >= -0.5) and np.all(v < 0.5)
    off = np.all(np.abs(np.abs(y - x) - 0.5) > 1e-6, axis=1)
    assert np.allclose(logmap(y, x)[off], -v[off], atol=1e-12)
    # geodesic endpoints
    assert np.allclose(geodesic(x, y, 0.0), x)
    assert np.all(np.abs(logmap(geodesic(x, y, 1.0), y)) < 1e-12)

    # equivariance of the displacement under every shipped group
    for dim, num in sorted(ds.keys()):
        group = ds.group(num, dim)
        xg, yg = rng.random((2, 1000, 3))
        if dim == 2:
            xg[:, 2] = yg[:, 2] = 0.0
        gi = int(rng.integers(group.order))
        R = group.rotations[gi]
        tau = group.translations[gi]
        d = logmap(xg, yg)
        d_rot = d @ R.T  # congruent to d_moved mod 1; wrap into [-1/2, 1/2)
        d_rot_w = d_rot - np.floor(d_rot + 0.5)
        d_moved = logmap(wrap(xg @ R.T + tau), wrap(yg @ R.T + tau))
        keep = np.all(np.abs(np.abs(d) - 0.5) > 1e-6, axis=1) & \
            np.all(np.abs(np.abs(d_rot_w) - 0.5) > 1e-6, axis=1)
        assert keep.sum() > 900
        assert np.allclose(d_moved[keep], d_rot_w[keep], atol=1e-9), (dim, num)

    # lattice coordinates round-trip
    for _ in range(1000):
        k = rng.uniform(-1, 1, 6)
        k *= min(1.0, 3.0 / max(np.linalg.norm(k), 1e-9))
        k2, q = L_to_k(k_to_L(k))
        assert np.allclose(k2, k, atol=1e-9)
        assert np.allclose(q, np.eye(3), atol=1e-9)

    # family masks, including the hexagonal gamma = 120 degree pin
    expected = {
        1: [1, 1, 1, 1, 1, 1], 10: [0, 1, 0, 1, 1, 1], 47: [0, 0, 0, 1, 1, 1],
        123: [0, 0, 0, 0, 1, 1], 191: [0, 0, 0, 0, 1, 1], 221: [0, 0, 0, 0, 0, 1],
    }
    for num, m in expected.items():
        assert np.array_equal(mask_of(ds.group(num)).m, m), num
    hexa = mask_of(ds.group(191))
    assert hexa.pinned == {0: HEXAGONAL_K1}
    assert HEXAGONAL_K1 == pytest.approx(-np.log(3.0) / 4.0, abs=1e-15)
    k_hex = hexa.apply(rng.uniform(-0.5, 0.5, 6))
    lengths, angles = cell_parameters(k_to_L(k_hex))
    assert lengths[0] == pytest.approx(lengths[1], rel=1e-9)
    assert angles[2] == pytest.approx(120.0, abs=1e-6)
    assert family_of(191) == "hexagonal"
    print("\ncriterion 5 (geometry suite): pass")


# -- 6. hand-written gradients match finite differences ----------------------


def test_criterion_6_gradient_check(ds):
    group = ds.group(2)
    pos = next(p for p in ds.positions(2, 3) if p.label == "2i")
    rng = np.random.default_rng(6)
    F, assignment = prior.sample_coords(group, [pos], rng)
    k = prior.sample_k(group, rng, scale=0.3)
    c1 = Crystal(k=k, F=F, A=np.eye(2)[[0, 0]])  # one species per orbit
    cert = certify(c1, group, assignment, tol=1e-8)
    ex = flow.TrainingExample(crystal=c1, group=group, assignment=assignment,
                              certificate=cert, h=2)
    # unit loss weights keep the base loss O(0.1), so central-difference
    # cancellation noise stays far below the tolerance even for coordinates
    # with tiny gradients
    cfg = flow.TrainConfig(lambda_F=1.0)
    bb = Backbone(BackboneConfig(a_in=2, a_out=1), rng=rng)
    for name in ("head_k2_w", "head_F_w", "head_A_w"):
        bb.params[name] = 0.05 * rng.standard_normal(bb.params[name].shape)
    batch = [flow.draw_pair(ex, cfg, rng)]
    grads = bb.zero_grads()
    flow.loss(batch, bb, cfg, grads=grads)
    eps = 1e-5
    worst = 0.0
    names = sorted(bb.params)
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(s)) for s in bb.params[name].shape)
        orig = bb.params[name][idx]
        bb.params[name][idx] = orig + eps
        up, _ = flow.loss(batch, bb, cfg)
        bb.params[name][idx] = orig - eps
        dn, _ = flow.loss(batch, bb, cfg)
        bb.params[name][idx] = orig
        fd = (up - dn) / (2 * eps)
        an = grads[name][idx]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
        worst = max(worst, rel)
    assert worst < 1e-4
    print(f"\ncriterion 6 (gradient check): pass, worst relative error {worst:.2e} "
          f"over 20 coordinates at step {eps}")


# -- 7/9. the toy benchmark: trained once, evaluated at two step counts ------


@pytest.fixture(scope="session")
def toy_run():
    t0 = time.time()
    splits = synthbench.make_dataset(seed=0)
    backbone, _ = flow.train(splits["train"], synthbench.TOY_CONFIG)
    mr50, rmse50 = synthbench.evaluate_csp(
        backbone, splits["test"], synthbench.TOY_CONFIG, seed=100, steps=50)
    elapsed = time.time() - t0
    return splits, backbone, mr50, rmse50, elapsed


def test_criterion_7_toy_csp_match_rate(toy_run):
    splits, _, mr50, rmse50, elapsed = toy_run
    groups = {ex.group.number for ex in splits["train"]}
    families = {family_of(num) for num in groups}
    assert len(groups) >= 3 and len(families) >= 3
    assert len(splits["train"]) >= 200
    assert elapsed < 600.0
    assert mr50 >= 80.0
    print(f"\ncriterion 7 (toy CSP): pass, MR {mr50:.1f}% rmse {rmse50:.4f} "
          f"at 50 steps; groups {sorted(groups)} families {sorted(families)}; "
          f"{len(splits['train'])} train crystals in {elapsed:.0f}s")


def test_criterion_9_step_count_plateau(toy_run):
    splits, backbone, mr50, _, _ = toy_run
    mr500, _ = synthbench.evaluate_csp(
        backbone, splits["test"], synthbench.TOY_CONFIG, seed=100, steps=500)
    gap = abs(mr50 - mr500)
    assert gap <= 2.0
    print(f"\ncriterion 9 (step plateau): pass, MR(50) {mr50:.2f}% "
          f"MR(500) {mr500:.2f}%, gap {gap:.2f} points")


# -- 8. the symmetry machinery is what makes the model work ------------------


def test_criterion_8_ablation_ordering():
    splits = synthbench.make_dataset(seed=0)
    cfg = replace(synthbench.TOY_CONFIG, epochs=80)
    rows = synthbench.run_ablation(splits, cfg, seeds=(0, 1, 2), eval_seed=100)
    by_cell = {}
    for name, _, _, seed, mr, _ in rows:
        by_cell.setdefault(name, {})[seed] = mr
    for seed in (0, 1, 2):
        assert by_cell["equivariant+wyckoff"][seed] > by_cell["plain+uniform"][seed]
    means = {name: np.mean(list(v.values())) for name, v in by_cell.items()}
    print(f"\ncriterion 8 (ablation): pass, mean MR "
          + ", ".join(f"{k} {v:.1f}%" for k, v in means.items()))


# -- 10. fixed seeds give byte-identical artifacts ---------------------------


def test_criterion_10_byte_reproducibility(tmp_path, ds):
    cfg = replace(synthbench.TOY_CONFIG, epochs=2)
    outputs = []
    for run in range(2):
        splits = synthbench.make_dataset(n_per_template=4, seed=0)
        backbone, _ = flow.train(splits["train"], cfg)
        ckpt = tmp_path / f"ckpt_{run}.json"
        sgio.save_checkpoint(ckpt, backbone, cfg)
        ex = splits["test"][0]
        crystal, assignment, _ = flow.sample(
            backbone, ex.group, list(ex.assignment.positions), cfg,
            np.random.default_rng(0), h=ex.h, fixed_A=ex.crystal.A)
        struct = tmp_path / f"structure_{run}.json"
        sgio.save_structure(struct, crystal, ex.group.number, ex.group.dimension,
                            assignment.labels(), seed=0)
        outputs.append((ckpt.read_bytes(), struct.read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    print("\ncriterion 10 (reproducibility): pass, checkpoints and structures "
          "byte-identical across two fixed-seed runs")
