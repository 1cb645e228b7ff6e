"""Relative (s,p)-capacity by constrained energy minimization, and the Wiener diagnostic.

``Cap(E, B(xi0, 2r)) = inf { E(v) : v >= 1 on E, v = 0 outside B(xi0, 2r) }``.  Truncating
an admissible ``v`` to ``[0, 1]`` never raises the energy, so the discrete problem is a
box-constrained minimization with ``v = 1`` pinned on E.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .domain import (INTERIOR, Ball, Domain, Grid, GridFunction, Interval, Params, as_points,
                     build_grid)
from .energy import gagliardo_energy
from .errors import (ApproximationWarning, FraclabError, GeometryError, NoConvergence,
                     UnresolvedRadius, ValidationError)
from .kernel import KernelMatrix, assemble_kernel
from .reporting import write_csv
from .solvers import Reduced, SolverConfig, minimize

__all__ = ["CapacityResult", "WienerReport", "capacity", "capacity_grid", "ball_nodes",
           "wiener_integrand", "write_wiener_csv"]

MIN_CELLS = 8


@dataclass
class CapacityResult:
    value: float
    potential: GridFunction
    r: float
    xi0: np.ndarray
    converged: bool
    residual: float = 0.0
    iters: int = 0


def capacity_grid(xi0, r: float, params: Params, cells: int = 16, outer: float = 2.0):
    """Local grid and kernel whose interior is the ambient ball ``B(xi0, outer*r)``.

    The lattice is centred on ``xi0`` with ``cells`` cells per radius ``r``; the collar is
    four cells wide and the far field starts right after (exterior data is zero, so only
    the total exterior mass matters, which the tail carries exactly).
    """
    xi0 = np.atleast_1d(np.asarray(xi0, float))
    n = params.n
    if len(xi0) != n:
        raise ValidationError(f"xi0 has dimension {len(xi0)}, params.n={n}")
    h = r / cells
    R = outer * r
    shape = Interval(xi0[0] - R, xi0[0] + R) if n == 1 else Ball(tuple(xi0), R)
    dom = Domain(shape, collar_delta=4 * h, trunc_radius=max(2 * R, R + 8 * h))
    grid = build_grid(dom, h, params, offset=xi0)
    return grid, assemble_kernel(grid, params)


def ball_nodes(grid: Grid, xi0, r: float, exclude=None) -> np.ndarray:
    """Interior nodes in the closed ball ``B(xi0, r)``, optionally dropping points of ``exclude``."""
    xi0 = np.atleast_1d(np.asarray(xi0, float))
    it = grid.interior
    x = grid.nodes[it]
    sel = np.linalg.norm(x - xi0, axis=1) <= r * (1 + 1e-12)
    if exclude is not None:
        sel &= ~exclude.contains(x)
    return it[sel]


def capacity(grid: Grid, E, xi0, r: float, K: KernelMatrix, cfg: Optional[SolverConfig] = None,
             outer: float = 2.0) -> CapacityResult:
    """Discrete ``Cap(E, B(xi0, outer*r))`` by projected descent on ``[0, 1]``.

    ``E`` is an array of interior node indices inside the closed ball ``B(xi0, r)``; the
    grid's interior must be the ambient ball (see :func:`capacity_grid`).
    """
    cfg = cfg or SolverConfig()
    K.grid.check(grid.id, "grid")
    xi0 = np.atleast_1d(np.asarray(xi0, float))
    if not r > 0:
        raise ValidationError("radius must be positive")
    if r / grid.h < MIN_CELLS * (1 - 1e-12):
        raise UnresolvedRadius(f"r={r:g} spans {r / grid.h:.2f} cells, need at least {MIN_CELLS}")
    E = np.unique(np.asarray(E, dtype=np.int64))
    it_mask = grid.cls == INTERIOR
    if len(E):
        if not np.all(it_mask[E]):
            raise GeometryError("E must consist of interior nodes")
        if np.max(np.linalg.norm(grid.nodes[E] - xi0, axis=1)) > r * (1 + 1e-12):
            raise GeometryError("E must lie in the closed ball B(xi0, r)")
    dist = np.linalg.norm(grid.nodes[grid.interior] - xi0, axis=1)
    if np.max(dist) >= outer * r * (1 + 1e-12) + grid.h:
        raise GeometryError("grid interior extends beyond the ambient ball B(xi0, outer*r)")

    data = np.zeros(grid.size)
    data[E] = 1.0
    if len(E) == 0:
        return CapacityResult(0.0, GridFunction(data, grid.id, 0.0), r, xi0, True)

    pos_of = np.full(grid.size, -1, dtype=np.int64)
    pos_of[K.active] = np.arange(len(K.active))
    inE = np.zeros(grid.size, bool)
    inE[E] = True
    free_nodes = grid.interior[~inE[grid.interior]]
    free = pos_of[free_nodes]
    if len(free) == 0:
        potential = GridFunction(data, grid.id, 0.0)
        return CapacityResult(gagliardo_energy(K, potential), potential, r, xi0, True)

    prob = Reduced(K, free, data, 0.0)
    if prob.linear:
        u0 = np.clip(np.linalg.solve(prob.A, prob.b), 0.0, 1.0)
    else:
        u0 = np.zeros(len(free))
    try:
        res = minimize(prob, u0, cfg, lo=0.0, hi=1.0, label="capacity")
    except NoConvergence as exc:
        vals = data.copy()
        vals[free_nodes] = exc.best
        pot = GridFunction(vals, grid.id, 0.0)
        exc.best = CapacityResult(gagliardo_energy(K, pot), pot, r, xi0, False, exc.residual, exc.iters)
        raise
    data[free_nodes] = res.u
    potential = GridFunction(data, grid.id, 0.0)
    return CapacityResult(gagliardo_energy(K, potential), potential, r, xi0, True, res.residual, res.iters)


# ---------------------------------------------------------------- Wiener integrand

@dataclass
class WienerReport:
    radii: np.ndarray
    capacities: np.ndarray
    integrand: np.ndarray
    partial_sums: np.ndarray
    dyadic_sum: float
    diverging: bool
    slope: float
    usable: np.ndarray
    errors: List[str] = field(default_factory=list)
    cells: int = 16

    def rows(self):
        for k, (r, c, g, s) in enumerate(zip(self.radii, self.capacities, self.integrand, self.partial_sums)):
            yield k, r, c, g, s


def _on_boundary(domain: Domain, xi0, r0):
    if domain.shape.contains(xi0[None, :])[0]:
        raise GeometryError("xi0 is an interior point of the domain, not a boundary point")
    n = len(xi0)
    if n == 1:
        dirs = np.array([[-1.0], [1.0]])
    else:
        t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        dirs = np.stack([np.cos(t), np.sin(t)], 1)
    for rho in (1e-9, 1e-6, 1e-3):
        if domain.shape.contains(xi0 + rho * r0 * dirs).any():
            return
    raise GeometryError("xi0 does not lie on the boundary of the domain")


def _one_radius(domain, xi0, r, params, cfg, cells):
    grid, K = capacity_grid(xi0, r, params, cells)
    E = ball_nodes(grid, xi0, r, exclude=domain.shape)
    return capacity(grid, E, xi0, r, K, cfg).value


def wiener_integrand(domain: Domain, xi0, r0: float, k_max: int, params: Params,
                     cfg: Optional[SolverConfig] = None, cells: int = 16, workers: int = 1) -> WienerReport:
    """``(Cap(B(xi0,r_k) \\ Omega, B(xi0,2r_k)) / r_k^(n-ps))^(1/(p-1))`` on ``r_k = r0 2^-k``.

    Each radius gets its own lattice with ``cells`` cells per ``r_k``.  The verdict
    ``diverging`` is a heuristic: the average integrand over the last third of the radii is
    at least half the average over the first third.  Failed radii are marked unusable and
    contribute nothing to the sums.
    """
    cfg = cfg or SolverConfig()
    if k_max < 0:
        raise ValidationError("k_max must be >= 0")
    xi0 = as_points(xi0, params.n)[0]
    if domain.n != params.n:
        raise ValidationError("domain and params dimensions differ")
    _on_boundary(domain, xi0, r0)
    radii = r0 * 2.0 ** -np.arange(k_max + 1)

    def job(r):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ApproximationWarning)
                return _one_radius(domain, xi0, float(r), params, cfg, cells), ""
        except FraclabError as exc:
            return math.nan, f"r={r:.17g}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(job, radii))
    else:
        out = [job(r) for r in radii]
    caps = np.array([c for c, _ in out])
    errors = [e for _, e in out if e]
    usable = np.isfinite(caps)
    scale = radii ** (params.n - params.ps)
    integrand = np.where(usable, np.maximum(np.where(usable, caps, 0.0), 0.0) / scale, 0.0) ** (1.0 / (params.p - 1))
    integrand = np.where(usable, integrand, np.nan)
    partial = np.cumsum(np.where(usable, integrand, 0.0) * math.log(2.0))
    good = integrand[usable]
    third = max(1, len(good) // 3)
    first = float(np.mean(good[:third])) if len(good) else 0.0
    last = float(np.mean(good[-third:])) if len(good) else 0.0
    diverging = bool(first > 0 and last >= 0.5 * first)
    ks = np.arange(k_max + 1)
    slope = float(np.polyfit(ks, partial, 1)[0]) if k_max >= 1 else float(partial[0])
    return WienerReport(radii, caps, integrand, partial, float(partial[-1]), diverging, slope,
                        usable, errors, cells)


def write_wiener_csv(report: WienerReport, path):
    write_csv(path, ["k", "r_k", "cap", "integrand", "partial_sum"],
              ([k, float(r), float(c), float(g), float(p)] for k, r, c, g, p in report.rows()))
