import numpy as np
import pytest

from sgflow import prior
from sgflow.lattice import HEXAGONAL_K1
from sgflow.sgdata import load_default
from sgflow.symmetry import certify
from sgflow.torus import wrap


@pytest.fixture(scope="module")
def ds():
    return load_default()


def _position(ds, number, label, dimension=3):
    return next(p for p in ds.positions(number, dimension) if p.label == label)


def test_fixed_point_position_ignores_noise(ds):
    g = ds.group(221)
    pos = _position(ds, 221, "1a")
    for seed in range(5):
        F, _ = prior.sample_coords(g, [pos], np.random.default_rng(seed))
        assert np.allclose(F, 0.0)


def test_general_pair_is_inversion_image(ds):
    g = ds.group(2)
    pos = _position(ds, 2, "2i")
    F, _ = prior.sample_coords(g, [pos], np.random.default_rng(1))
    assert np.allclose(F[1], wrap(-F[0]), atol=1e-12)


def test_mismatched_position_rejected(ds):
    g = ds.group(2)
    alien = _position(ds, 221, "1a")
    with pytest.raises(prior.WyckoffMismatch):
        prior.sample_coords(g, [alien], np.random.default_rng(0))


def test_sample_k_respects_family_mask(ds):
    rng = np.random.default_rng(2)
    k_cubic = prior.sample_k(ds.group(221), rng)
    assert np.allclose(k_cubic[:5], 0.0) and k_cubic[5] != 0.0
    k_hex = prior.sample_k(ds.group(191), rng)
    assert k_hex[0] == pytest.approx(HEXAGONAL_K1)
    assert np.allclose(k_hex[1:4], 0.0)
    k_tric = prior.sample_k(ds.group(1), rng)
    assert np.count_nonzero(k_tric) == 6


def test_sample_k_scale_is_linear(ds):
    k1 = prior.sample_k(ds.group(1), np.random.default_rng(3), scale=1.0)
    k2 = prior.sample_k(ds.group(1), np.random.default_rng(3), scale=0.25)
    assert np.allclose(k2, 0.25 * k1)


@pytest.mark.parametrize("h,width", [(2, 1), (3, 2), (4, 2), (5, 3), (8, 3)])
def test_atom_code_width(h, width):
    assert prior.atom_code_width(h) == width


def test_encode_decode_roundtrip():
    for h in (2, 3, 4, 7):
        species = np.arange(h)
        code = prior.encode_types(species, h)
        assert set(np.unique(code)) <= {-1.0, 1.0}
        assert np.array_equal(prior.decode_types(code, h), species)


def test_decode_clips_out_of_range_codes():
    # all-positive bits decode to 2^w - 1, clipped into [0, h)
    code = np.ones((1, 2))
    assert prior.decode_types(code, 3)[0] == 2


def test_atom_noise_constant_within_orbit(ds):
    wa_positions = (_position(ds, 221, "1a"), _position(ds, 221, "8g"))
    from sgflow.symmetry import WyckoffAssignment
    wa = WyckoffAssignment(wa_positions)
    A = prior.sample_atoms(wa, h=4, rng=np.random.default_rng(4))
    assert A.shape == (9, 2)
    assert np.all(A[1:] == A[1])
    assert not np.allclose(A[0], A[1])


def test_full_sample_is_certified_and_seeded(ds):
    for num in (2, 123, 221, 191):
        g = ds.group(num)
        positions = [max(ds.positions(num, 3), key=lambda p: p.multiplicity)]
        s = prior.sample(g, positions, np.random.default_rng(10), h=4)
        certify(s.crystal, g, s.assignment, tol=1e-8)
        s2 = prior.sample(g, positions, np.random.default_rng(10), h=4)
        assert np.array_equal(s.crystal.F, s2.crystal.F)
        assert np.array_equal(s.crystal.k, s2.crystal.k)
        assert np.array_equal(s.crystal.A, s2.crystal.A)


def test_wallpaper_sample_has_zero_k(ds):
    g = ds.group(11, dimension=2)
    positions = [max(ds.positions(11, 2), key=lambda p: p.multiplicity)]
    s = prior.sample(g, positions, np.random.default_rng(5))
    assert np.array_equal(s.crystal.k, np.zeros(6))
    certify(s.crystal, g, s.assignment, tol=1e-8)


def test_structure_prediction_mode_keeps_atom_types(ds):
    g = ds.group(2)
    pos = _position(ds, 2, "2i")
    A = prior.encode_types(np.array([1, 1]), 4)
    s = prior.sample(g, [pos], np.random.default_rng(6), h=4, atom_types=A)
    assert np.array_equal(s.crystal.A, A)
    with pytest.raises(ValueError):
        prior.sample(g, [pos], np.random.default_rng(6), atom_types=A[:1])
