import numpy as np
import pytest

from sgflow import prior
from sgflow.sgdata import load_default
from sgflow.symmetry import (
    Crystal,
    NotSymmetric,
    StaleCertificate,
    WyckoffAssignment,
    act,
    certify,
    is_constructable,
    permute,
)
from sgflow.torus import torus_distance, wrap


@pytest.fixture(scope="module")
def ds():
    return load_default()


def _position(ds, number, label, dimension=3):
    return next(p for p in ds.positions(number, dimension) if p.label == label)


def test_act_quarter_turn_wallpaper(ds):
    p4mm = ds.group(11, dimension=2)
    rot = next(op for op in p4mm.ops
               if np.array_equal(op.rotation_float(), [[0, -1, 0], [1, 0, 0], [0, 0, 1]])
               and not op.translation_float().any())
    c = Crystal(k=np.zeros(6), F=np.array([[0.1, 0.3, 0.0]]), A=np.zeros((1, 1)))
    moved = act(rot, c)
    assert np.allclose(moved.F, [[0.7, 0.1, 0.0]])


def test_act_leaves_k_and_A_alone(ds):
    g = ds.group(2)
    c = Crystal(k=np.arange(6.0), F=np.array([[0.2, 0.4, 0.6]]), A=np.array([[3.0]]))
    moved = act(g.ops[1], c)
    assert moved.k is c.k and moved.A is c.A
    assert np.allclose(moved.F, wrap(-c.F))


def test_permute_reorders_F_and_A_together():
    c = Crystal(k=np.zeros(6), F=np.array([[0.1, 0, 0], [0.2, 0, 0]]),
                A=np.array([[1.0], [2.0]]))
    p = permute(np.array([1, 0]), c)
    assert np.allclose(p.F[:, 0], [0.2, 0.1])
    assert np.allclose(p.A[:, 0], [2.0, 1.0])
    with pytest.raises(ValueError):
        permute(np.array([0]), c)


def test_assignment_certificate_matches_brute_force(ds):
    g = ds.group(2)
    pos = _position(ds, 2, "2i")
    wa = WyckoffAssignment((pos,))
    rng = np.random.default_rng(0)
    F, _ = prior.sample_coords(g, [pos], rng)
    c = Crystal(k=np.zeros(6), F=F, A=np.zeros((2, 1)))
    exact = wa.certificate(g)
    brute = certify(c, g, wa, tol=1e-8)
    assert np.array_equal(exact.perms, brute.perms)
    # inversion swaps the general pair
    inv_row = next(i for i, op in enumerate(g.ops)
                   if np.array_equal(op.rotation_float(), -np.eye(3)))
    assert list(exact.perms[inv_row]) == [1, 0]
    assert exact.verify_homomorphism()


def test_certificate_homomorphism_all_groups(ds):
    rng = np.random.default_rng(1)
    for dim, num in ds.keys():
        g = ds.group(num, dim)
        pos = max(ds.positions(num, dim), key=lambda p: p.multiplicity)
        cert = WyckoffAssignment((pos,)).certificate(g)
        assert cert.verify_homomorphism(), (dim, num)
        F = pos.project(rng.random(3))
        c = Crystal(k=np.zeros(6), F=F, A=np.zeros((pos.multiplicity, 1)))
        cert.spot_check(c, rng, tol=1e-8)


def test_certify_rejects_perturbed_crystal(ds):
    g = ds.group(221)
    pos = _position(ds, 221, "6e")
    wa = WyckoffAssignment((pos,))
    F = pos.project(np.array([0.31, 0.0, 0.0]))
    tol = 1e-6
    bad = F.copy()
    bad[0] = wrap(bad[0] + 10 * tol)
    c = Crystal(k=np.zeros(6), F=bad, A=np.zeros((6, 1)))
    with pytest.raises(NotSymmetric):
        certify(c, g, wa, tol=tol)


def test_certify_rejects_type_asymmetry(ds):
    g = ds.group(2)
    pos = _position(ds, 2, "2i")
    F = pos.project(np.array([0.12, 0.34, 0.56]))
    c = Crystal(k=np.zeros(6), F=F, A=np.array([[1.0], [2.0]]))
    with pytest.raises(NotSymmetric, match="atom types"):
        certify(c, g, WyckoffAssignment((pos,)), tol=1e-8)


def test_spot_check_detects_stale_certificate(ds):
    g = ds.group(221)
    pos = _position(ds, 221, "8g")
    wa = WyckoffAssignment((pos,))
    cert = wa.certificate(g)
    F = pos.project(np.array([0.21, 0.21, 0.21]))
    good = Crystal(k=np.zeros(6), F=F, A=np.zeros((8, 1)))
    rng = np.random.default_rng(3)
    for _ in range(5):
        cert.spot_check(good, rng, tol=1e-8)
    stale = good.with_(F=np.random.default_rng(4).random((8, 3)))
    with pytest.raises(StaleCertificate):
        for _ in range(20):
            cert.spot_check(stale, np.random.default_rng(5), tol=1e-8)


def test_is_constructable_accepts_projection_rejects_noise(ds):
    rng = np.random.default_rng(6)
    for num in (2, 123, 221):
        pos = max(ds.positions(num, 3), key=lambda p: p.multiplicity)
        wa = WyckoffAssignment((pos,))
        x = rng.random(3)
        F = pos.project(x)
        ok, wit = is_constructable(F, wa, tol=1e-8)
        assert ok
        assert torus_distance(pos.project(wit[0]), F).max() < 1e-8
        noisy = wrap(F + rng.normal(0, 0.05, F.shape))
        if pos.multiplicity > 1:
            ok2, wit2 = is_constructable(noisy, wa, tol=1e-8)
            assert not ok2 and wit2 is None


def test_is_constructable_special_position_off_site(ds):
    pos = _position(ds, 221, "3c")  # (0, 1/2, 1/2) type: zero free directions
    wa = WyckoffAssignment((pos,))
    F = pos.project(np.array([0.9, 0.9, 0.9]))
    ok, _ = is_constructable(F, wa, tol=1e-8)
    assert ok
    ok2, _ = is_constructable(wrap(F + 0.01), wa, tol=1e-8)
    assert not ok2


def test_multi_position_assignment_certify_and_construct(ds):
    g = ds.group(123)
    wa = WyckoffAssignment((_position(ds, 123, "1a"), _position(ds, 123, "4j")))
    rng = np.random.default_rng(7)
    F, assignment = prior.sample_coords(g, list(wa.positions), rng)
    c = Crystal(k=np.zeros(6), F=F, A=np.zeros((assignment.n, 1)))
    cert = certify(c, g, assignment, tol=1e-8)
    assert cert.n == 5
    ok, _ = is_constructable(F, assignment, tol=1e-8)
    assert ok
