import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgflow.torus import geodesic, logmap, torus_distance, wrap


def test_wrap_basic():
    assert wrap(np.array(0.3)) == pytest.approx(0.3)
    assert wrap(np.array(-0.2)) == pytest.approx(0.8)
    assert wrap(np.array(2.7)) == pytest.approx(0.7)


def test_wrap_rounding_to_one_gives_zero():
    # 1.0 - eps can round to 1.0 inside x - floor(x); the contract is [0, 1)
    x = np.nextafter(1.0, 0.0)
    assert wrap(np.array([x - np.floor(x)])) < 1.0
    assert wrap(np.array([-1e-18]))[0] == 0.0


def test_logmap_identity():
    x = np.array([[0.1, 0.5, 0.99]])
    assert np.allclose(logmap(x, x), 0.0)


def test_logmap_wraparound_shortest_path():
    assert logmap(np.array(0.9), np.array(0.1)) == pytest.approx(0.2)
    assert logmap(np.array(0.1), np.array(0.9)) == pytest.approx(-0.2)


def test_logmap_antipodal_branch():
    # |y - x| = 1/2 resolves deterministically to -1/2
    assert logmap(np.array(0.0), np.array(0.5)) == pytest.approx(-0.5)
    assert logmap(np.array(0.25), np.array(0.75)) == pytest.approx(-0.5)


@given(st.lists(st.floats(0.0, 0.9999999), min_size=2, max_size=2),
       st.lists(st.floats(0.0, 0.9999999), min_size=2, max_size=2))
def test_logmap_range_and_antisymmetry(xs, ys):
    x, y = np.array(xs), np.array(ys)
    v = logmap(x, y)
    assert np.all(v >= -0.5) and np.all(v < 0.5)
    d = np.abs(y - x)
    away_from_cut = np.all(np.abs(d - 0.5) > 1e-9)
    if away_from_cut:
        assert np.allclose(logmap(y, x), -v, atol=1e-12)


def test_logmap_matches_rounding_formula_off_cut():
    rng = np.random.default_rng(0)
    x, y = rng.random((2, 500, 3))
    d = y - x
    keep = np.abs(np.abs(d - np.round(d)) - 0.5) > 1e-6
    naive = d - np.round(d)
    assert np.allclose(logmap(x, y)[keep], naive[keep], atol=1e-12)


def test_geodesic_endpoints():
    rng = np.random.default_rng(1)
    F0, F1 = rng.random((2, 5, 3))
    assert np.allclose(geodesic(F0, F1, 0.0), F0)
    assert np.allclose(torus_distance(geodesic(F0, F1, 1.0), F1), 0.0, atol=1e-12)


def test_geodesic_midpoint_across_seam():
    mid = geodesic(np.array(0.9), np.array(0.1), 0.5)
    assert mid == pytest.approx(0.0, abs=1e-12)


def test_torus_distance_symmetric():
    rng = np.random.default_rng(2)
    x, y = rng.random((2, 10, 3))
    assert np.allclose(torus_distance(x, y), torus_distance(y, x))
