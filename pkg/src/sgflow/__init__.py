"""Space-group conditional flow matching for symmetric crystal generation.

The package is organized around a small set of building blocks:

* :mod:`sgflow.sgdata` -- exact-rational space groups and Wyckoff positions,
  loaded from a verifiable JSON dataset.
* :mod:`sgflow.symmetry` -- group actions on crystals, permutation
  certificates, and checkers for symmetry / Wyckoff-constructability.
* :mod:`sgflow.torus` / :mod:`sgflow.lattice` -- flat-torus geometry and the
  six-coefficient lattice representation with crystal-family masks.
* :mod:`sgflow.prior` -- the symmetry-constrained noise distribution.
* :mod:`sgflow.field` -- the message-passing vector field, its efficient
  group-averaged wrapper, and a brute-force averaging oracle.
* :mod:`sgflow.flow` -- training losses, the Adam/cosine training loop, and
  the Euler sampler with anti-annealing.
* :mod:`sgflow.evalx` / :mod:`sgflow.synthbench` -- structure matching,
  validity checks, and synthetic benchmark drivers.
"""

__version__ = "0.1.0"
