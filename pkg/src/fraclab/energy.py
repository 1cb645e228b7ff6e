"""Discrete Gagliardo energy, its gradient, L^q norms, the Rayleigh quotient and torsion objective.

Volume convention: every functional is a quadrature of an integral over the Lebesgue
measure, so with ``vol_i`` the cell volume::

    E(u) = sum_i vol_i sum_{j != i} w_ij |u_i - u_j|^p  +  2 sum_i vol_i T_i |u_i - u_far|^p

(the double integral over R^n x R^n, tail counted on both sides), and
``(1/p) dE/du_i = vol_i * L u_i`` with ``L`` the operator of :mod:`fraclab.kernel`.
Pairs of two FAR nodes are dropped: they are data, never unknowns, and vanish when
the far field is constant.
"""
from __future__ import annotations

import numpy as np

from .domain import INTERIOR, GridFunction
from .errors import ZeroFunction
from .kernel import KernelMatrix, _far_term, pair_energy, pair_phi, phi_p

__all__ = ["GridFunction", "gagliardo_energy", "energy_gradient", "lq_norm",
           "rayleigh_quotient", "torsion_objective", "torsion_gradient"]


def _far_energy(K: KernelMatrix, vals: np.ndarray, p: float) -> float:
    far = K.grid.far
    if len(far) == 0:
        return 0.0
    uA = vals[K.active]
    uf = vals[far]
    if np.all(uf == uf[0]):
        return float(np.sum(K.far_sum * np.abs(uA - uf[0]) ** p))
    total = 0.0
    step = max(1, 4_000_000 // len(far))
    pos = np.arange(len(K.active))
    for a in range(0, len(pos), step):
        blk = K.far_block(pos[a:a + step])
        total += float(np.sum(blk * np.abs(uA[a:a + step, None] - uf[None, :]) ** p))
    return total


def gagliardo_energy(K: KernelMatrix, u: GridFunction) -> float:
    """Discrete seminorm ``[u]^p`` (see module docstring for the convention)."""
    K.grid.check(u.grid_id, "u")
    p = K.p
    vol = K.grid.h ** K.grid.n
    uA = u.values[K.active]
    e = 2.0 * pair_energy(K.w, uA, p)
    e += 2.0 * _far_energy(K, u.values, p)
    e += 2.0 * float(np.sum(K.tail * np.abs(uA - u.far_value) ** p))
    return vol * e


def energy_gradient(K: KernelMatrix, u: GridFunction) -> GridFunction:
    """``(1/p) dE/du_i = vol_i * L u_i`` on interior and collar nodes; FAR entries are 0."""
    K.grid.check(u.grid_id, "u")
    p = K.p
    uA = u.values[K.active]
    rows = np.arange(len(K.active))
    g = pair_phi(K.w, uA, p, rows) + _far_term(K, u.values, rows, p) + K.tail * phi_p(uA - u.far_value, p)
    out = np.zeros(K.grid.size)
    out[K.active] = 2.0 * g * K.grid.vol[K.active]
    return GridFunction(out, K.grid.id, 0.0)


def lq_norm(u: GridFunction, q: float, grid=None) -> float:
    """``(sum_{i in Omega} vol_i |u_i|^q)^(1/q)``.

    Needs the grid to know which nodes are interior; pass it explicitly or a KernelMatrix.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    g = getattr(grid, "grid", grid)
    if g is None:
        raise ValueError("lq_norm needs the grid (or kernel) to locate interior nodes")
    g.check(u.grid_id, "u")
    it = g.cls == INTERIOR
    return float(np.sum(g.vol[it] * np.abs(u.values[it]) ** q) ** (1.0 / q))


def rayleigh_quotient(K: KernelMatrix, u: GridFunction, q: float) -> float:
    """``E(u) / ||u||_q^p``; raises ZeroFunction when the norm vanishes."""
    nrm = lq_norm(u, q, K)
    if nrm == 0.0:
        raise ZeroFunction("Rayleigh quotient of the zero function")
    return gagliardo_energy(K, u) / nrm ** K.p


def torsion_objective(K: KernelMatrix, u: GridFunction) -> float:
    """``E(u)/p - sum_{i in Omega} vol_i u_i``."""
    it = K.grid.cls == INTERIOR
    return gagliardo_energy(K, u) / K.p - float(np.sum(K.grid.vol[it] * u.values[it]))


def torsion_gradient(K: KernelMatrix, u: GridFunction) -> GridFunction:
    """Gradient of :func:`torsion_objective` w.r.t. interior values: ``vol_i (L u_i - 1)``."""
    g = energy_gradient(K, u).values
    it = K.grid.cls == INTERIOR
    out = np.zeros(K.grid.size)
    out[it] = g[it] - K.grid.vol[it]
    return GridFunction(out, K.grid.id, 0.0)
