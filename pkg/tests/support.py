"""Cached grids, kernels and solves shared across test modules."""
from functools import lru_cache

import numpy as np

from fraclab import (Domain, GridFunction, Interval, Params, assemble_kernel, build_grid, solve_first_eigenpair,
                     solve_torsion)
from fraclab.domain import INTERIOR


@lru_cache(maxsize=None)
def interval_kernel(h, p=2.0, s=0.5, q=2.0, a=-1.0, b=1.0):
    P = Params(1, s, p, q)
    g = build_grid(Domain(Interval(a, b)), h, P)
    return assemble_kernel(g, P)


@lru_cache(maxsize=None)
def torsion(h, p=2.0, s=0.5):
    return solve_torsion(interval_kernel(h, p, s))


@lru_cache(maxsize=None)
def eigen(h, p=2.0, s=0.5, q=2.0):
    return solve_first_eigenpair(interval_kernel(h, p, s, q), q)


def random_interior(K, rng, positive=False, scale=1.0):
    g = K.grid
    v = rng.random(g.size) + 0.1 if positive else rng.standard_normal(g.size)
    return GridFunction(np.where(g.cls == INTERIOR, scale * v, 0.0), g.id, 0.0)
