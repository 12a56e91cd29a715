"""Flat-torus geometry: wrapping, logarithmic map, geodesic interpolation.

All fractional coordinates live on the flat torus [0, 1)^3.  The logarithmic
map returns the shortest signed displacement between two points, valued in
[-1/2, 1/2).  At the antipodal distance |y - x| = 1/2 the atan2 branch picks
-1/2 deterministically.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce coordinates into [0, 1).

    Values that round up to exactly 1.0 after the floor subtraction (e.g.
    1.0 - eps for tiny eps) are mapped to 0.0.
    """
    x = np.asarray(x, dtype=float)
    out = x - np.floor(x)
    return np.where(out >= 1.0, 0.0, out)


def logmap(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Shortest signed displacement from x to y on the torus, in [-1/2, 1/2)."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    v = np.arctan2(np.sin(TWO_PI * d), np.cos(TWO_PI * d)) / TWO_PI
    # atan2 alone yields (-1/2, 1/2]; fold the antipodal point onto -1/2.
    return np.where(v >= 0.5, -0.5, v)


def geodesic(f0: np.ndarray, f1: np.ndarray, t: float) -> np.ndarray:
    """Point at parameter t on the torus geodesic from f0 to f1."""
    return wrap(np.asarray(f0, dtype=float) + t * logmap(f0, f1))


def torus_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean norm of the wrapped displacement, along the last axis."""
    return np.linalg.norm(logmap(x, y), axis=-1)
