"""Quadrature weights for the kernel |x-y|^-(n+ps) and the discrete fractional p-Laplacian.

On the uniform lattice a weight depends only on the integer offset between two nodes,
so all weights come from one table: refined quadrature of the cell integral for
offsets within ``near_radius`` cells, the midpoint rule beyond.  The dense block is
stored for interior and collar nodes only; interactions with FAR nodes are summed
on the fly.

Discrete operator at an interior node::

    L u_i = 2 * (sum_j w_ij phi_p(u_i - u_j) + T_i phi_p(u_i - u_far))

where ``w_ij ~ int_{cell j} |x_i - y|^-(n+ps) dy`` and ``T_i`` is the kernel mass
beyond the lattice.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numba
import numpy as np
from scipy import integrate

from .domain import FAR, INTERIOR, Grid, GridFunction, Params
from .errors import GeometryError, KernelBudgetExceeded, ValidationError

NEAR_RADIUS = 4.0
GAUSS_POINTS = 8
DEFAULT_NODE_BUDGET = 20_000
CACHE_MAGIC = b"FRACKRN\x00"
CACHE_VERSION = 1


def phi_p(t, p):
    """``|t|^(p-2) t``, with ``phi_p(0) = 0`` for every p > 1."""
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > 0, a ** (p - 2.0) * t, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- weight table

def _gauss_cell_integral_2d(cx, cy, expo, k=GAUSS_POINTS, sub=4):
    """Integral of |z|^-expo over the unit cell centred at (cx, cy), composite Gauss."""
    xg, wg = np.polynomial.legendre.leggauss(k)
    edges = np.linspace(-0.5, 0.5, sub + 1)
    pts, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        pts.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * wg)
    pts, wts = np.concatenate(pts), np.concatenate(wts)
    X, Y = np.meshgrid(cx + pts, cy + pts, indexing="ij")
    W = np.outer(wts, wts)
    return float(np.sum(W * (X * X + Y * Y) ** (-expo / 2)))


@lru_cache(maxsize=32)
def unit_weight_table(n: int, ps: float, m: int, near_radius: float = NEAR_RADIUS) -> np.ndarray:
    """Weights on the unit lattice (h = 1) indexed by absolute offsets ``0..m`` per axis."""
    expo = n + ps
    if n == 1:
        j = np.arange(m + 1, dtype=float)
        with np.errstate(divide="ignore"):
            tab = j ** (-expo)
        tab[0] = 0.0
        for jj in range(1, min(m, int(near_radius)) + 1):
            a, b = jj - 0.5, jj + 0.5
            tab[jj] = (a ** (-ps) - b ** (-ps)) / ps
        return tab
    ii, jj = np.meshgrid(np.arange(m + 1, dtype=float), np.arange(m + 1, dtype=float), indexing="ij")
    r2 = ii * ii + jj * jj
    with np.errstate(divide="ignore"):
        tab = r2 ** (-expo / 2)
    tab[0, 0] = 0.0
    r = int(near_radius)
    for a in range(min(m, r) + 1):
        for b in range(a, min(m, r) + 1):
            if (a, b) == (0, 0) or a * a + b * b > near_radius ** 2:
                continue
            val = _gauss_cell_integral_2d(float(a), float(b), expo)
            tab[a, b] = tab[b, a] = val
    tab.setflags(write=False)
    return tab


def lattice_weights(grid: Grid, table: np.ndarray, ps: float, rows, cols) -> np.ndarray:
    """Dense weight block between node index arrays ``rows`` and ``cols``."""
    d = np.abs(grid.index[rows][:, None, :] - grid.index[cols][None, :, :])
    scale = grid.h ** (-ps)
    if grid.n == 1:
        return scale * table[d[..., 0]]
    return scale * table[d[..., 0], d[..., 1]]


def tail_weight(x, params: Params, grid: Optional[Grid] = None, r_inf: Optional[float] = None,
                center=None, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
    """Kernel mass ``int_{outside} |x - y|^-(n+ps) dy`` beyond the truncation region.

    In 1D the region is ``[lo, hi]`` (the outer lattice edges when a grid is given);
    in 2D it is the disk of radius ``r_inf`` around ``center``.
    """
    ps = params.ps
    if params.n == 1:
        x = np.asarray(x, dtype=float).reshape(-1)
        if grid is not None:
            lo, hi = grid.lattice_lo, grid.lattice_hi
        elif lo is None:
            c = 0.0 if center is None else float(np.ravel(center)[0])
            lo, hi = c - r_inf, c + r_inf
        return ((x - lo) ** (-ps) + (hi - x) ** (-ps)) / ps
    if grid is not None:
        r_inf, center = grid.r_inf, grid.center
    x = np.asarray(x, dtype=float).reshape(-1, 2) - np.asarray(center if center is not None else (0.0, 0.0))
    rho = np.linalg.norm(x, axis=1)
    m = 512
    theta = 2 * np.pi * np.arange(m) / m
    # distance from x to the circle along direction theta (relative to the radial direction)
    c = np.cos(theta)[None, :]
    s2 = np.sin(theta)[None, :] ** 2
    t0 = -rho[:, None] * c + np.sqrt(r_inf ** 2 - rho[:, None] ** 2 * s2)
    return (2 * np.pi / m) * np.sum(t0 ** (-ps), axis=1) / ps


# ---------------------------------------------------------------- numba kernels

@numba.njit(cache=True, inline="always")
def _phi(t, p):
    if t == 0.0:
        return 0.0
    return abs(t) ** (p - 2.0) * t


@numba.njit(parallel=True, cache=True)
def pair_phi_rows(w, u, rows, p):
    """``out[k] = sum_j w[rows[k], j] * phi_p(u[rows[k]] - u[j])``."""
    out = np.empty(len(rows))
    m = len(u)
    for k in numba.prange(len(rows)):
        i = rows[k]
        ui = u[i]
        acc = 0.0
        for j in range(m):
            acc += w[i, j] * _phi(ui - u[j], p)
        out[k] = acc
    return out


@numba.njit(parallel=True, cache=True)
def _pair_energy_rows(w, u, p):
    m = len(u)
    out = np.zeros(m)
    for i in numba.prange(m):
        acc = 0.0
        for j in range(i + 1, m):
            acc += w[i, j] * abs(u[i] - u[j]) ** p
        out[i] = acc
    return out


@numba.njit(cache=True, inline="always")
def _pow_diff(a, b, p):
    """``|a + b|^p - |a|^p`` without cancellation when ``b`` is small."""
    if a != 0.0 and (a + b) / a > 0.0:
        return abs(a) ** p * math.expm1(p * math.log1p(b / a))
    return abs(a + b) ** p - abs(a) ** p


@numba.njit(parallel=True, cache=True)
def _pair_energy_delta_rows(w, u, du, p):
    m = len(u)
    out = np.zeros(m)
    for i in numba.prange(m):
        acc = 0.0
        for j in range(i + 1, m):
            acc += w[i, j] * _pow_diff(u[i] - u[j], du[i] - du[j], p)
        out[i] = acc
    return out


def pair_energy(w, u, p) -> float:
    """``sum_{i<j} w_ij |u_i - u_j|^p`` with a fixed summation order."""
    return float(np.sum(_pair_energy_rows(w, np.ascontiguousarray(u, dtype=float), float(p))))


def pair_energy_delta(w, u, du, p) -> float:
    """Change of :func:`pair_energy` under ``u -> u + du``, computed without cancellation."""
    if p == 2.0:
        # (a+b)^2 - a^2 = 2ab + b^2 summed over pairs
        rs = w.sum(1)
        return float(du @ (rs * u) - du @ (w @ u)) + 0.5 * float(du @ (rs * du) - du @ (w @ du))
    return float(np.sum(_pair_energy_delta_rows(w, np.ascontiguousarray(u, float),
                                                np.ascontiguousarray(du, float), float(p))))


def pow_diff(a, b, p) -> np.ndarray:
    """Elementwise ``|a + b|^p - |a|^p`` without cancellation for small ``b``."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = b / a
        same = (a != 0) & (1.0 + ratio > 0)
        smooth = np.abs(a) ** p * np.expm1(p * np.log1p(np.where(same, ratio, 0.0)))
    return np.where(same, smooth, np.abs(a + b) ** p - np.abs(a) ** p)


def pair_phi(w, u, p, rows=None) -> np.ndarray:
    """Rows of ``sum_j w_ij phi_p(u_i - u_j)``."""
    u = np.ascontiguousarray(u, dtype=float)
    if rows is None:
        rows = np.arange(len(u))
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    return pair_phi_rows(w, u, rows, float(p))


# ---------------------------------------------------------------- kernel matrix

@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric weights among the active (interior + collar) nodes, plus far and tail masses.

    ``w[a, b]`` pairs ``grid.active[a]`` with ``grid.active[b]``.  ``far_sum`` is the total
    weight from each active node to all FAR nodes and ``tail`` the mass beyond the lattice.
    """

    grid: Grid
    params: Params
    w: np.ndarray
    tail: np.ndarray
    far_sum: np.ndarray
    table: np.ndarray
    active: np.ndarray

    @property
    def grid_id(self) -> str:
        return self.grid.id

    @property
    def ps(self) -> float:
        return self.params.ps

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def interior_pos(self) -> np.ndarray:
        """Positions of interior nodes inside the active block."""
        return np.flatnonzero(self.grid.cls[self.active] == INTERIOR)

    @property
    def total_mass(self) -> np.ndarray:
        """Kernel mass seen by each active node from the whole complement of its own cell."""
        return self.w.sum(1) + self.far_sum + self.tail

    def far_block(self, rows_pos, far_nodes=None) -> np.ndarray:
        far_nodes = self.grid.far if far_nodes is None else far_nodes
        return lattice_weights(self.grid, self.table, self.ps, self.active[rows_pos], far_nodes)


def _far_sums(grid, table, ps, active, chunk_elems=8_000_000):
    far = grid.far
    out = np.zeros(len(active))
    if len(far) == 0:
        return out
    step = max(1, chunk_elems // len(far))
    for a in range(0, len(active), step):
        blk = lattice_weights(grid, table, ps, active[a:a + step], far)
        out[a:a + step] = blk.sum(1)
    return out


def assemble_kernel(grid: Grid, params: Params, node_budget: int = DEFAULT_NODE_BUDGET,
                    near_radius: float = NEAR_RADIUS) -> KernelMatrix:
    """Weights for ``grid``; refuses when the active node count exceeds ``node_budget``."""
    if params.n != grid.n:
        raise ValidationError("params.n does not match the grid dimension")
    active = grid.active
    m = len(active)
    if m > node_budget:
        raise KernelBudgetExceeded(f"{m} active nodes exceed the budget of {node_budget} "
                                   f"({m * m * 8 / 1e9:.1f} GB dense)")
    span = int(np.max(grid.index.max(0) - grid.index.min(0)))
    table = unit_weight_table(grid.n, float(params.ps), span, near_radius)
    w = lattice_weights(grid, table, params.ps, active, active)
    w = np.ascontiguousarray(w)
    tail = tail_weight(grid.nodes[active], params, grid=grid)
    far_sum = _far_sums(grid, table, params.ps, active)
    w.setflags(write=False)
    return KernelMatrix(grid=grid, params=params, w=w, tail=tail, far_sum=far_sum, table=table, active=active)


def _far_term(K: KernelMatrix, u_vals: np.ndarray, rows_pos: np.ndarray, p: float) -> np.ndarray:
    """``sum_{j in FAR} w_ij phi_p(u_i - u_j)`` for active positions ``rows_pos``."""
    far = K.grid.far
    uA = u_vals[K.active[rows_pos]]
    if len(far) == 0:
        return np.zeros(len(rows_pos))
    uf = u_vals[far]
    if np.all(uf == uf[0]):
        return K.far_sum[rows_pos] * phi_p(uA - uf[0], p)
    out = np.empty(len(rows_pos))
    step = max(1, 4_000_000 // len(far))
    for a in range(0, len(rows_pos), step):
        blk = K.far_block(rows_pos[a:a + step])
        out[a:a + step] = np.sum(blk * phi_p(uA[a:a + step, None] - uf[None, :], p), axis=1)
    return out


def operator_rows(K: KernelMatrix, u_vals: np.ndarray, u_far: float, rows_pos: np.ndarray) -> np.ndarray:
    p = K.p
    uA = u_vals[K.active]
    s = pair_phi(K.w, uA, p, rows_pos)
    s = s + _far_term(K, u_vals, rows_pos, p)
    s = s + K.tail[rows_pos] * phi_p(uA[rows_pos] - u_far, p)
    return 2.0 * s


def apply_operator(K: KernelMatrix, u: GridFunction, u_far: Optional[float] = None) -> GridFunction:
    """Discrete ``(-Delta_p)^s u`` on interior nodes (zero on all other nodes)."""
    K.grid.check(u.grid_id, "u")
    uf = u.far_value if u_far is None else float(u_far)
    rows = K.interior_pos
    out = np.zeros(K.grid.size)
    out[K.active[rows]] = operator_rows(K, u.values, uf, rows)
    return GridFunction(out, K.grid.id, 0.0)


def operator_at_points(K: KernelMatrix, u: GridFunction, nodes, u_far: Optional[float] = None) -> np.ndarray:
    """Operator values at the given (active) node indices."""
    pos = np.searchsorted(K.active, np.asarray(nodes))
    if np.any(K.active[pos] != nodes):
        raise ValidationError("operator evaluation is only available on interior/collar nodes")
    uf = u.far_value if u_far is None else float(u_far)
    return operator_rows(K, u.values, uf, pos)


# ---------------------------------------------------------------- annulus integrals

@dataclass(frozen=True)
class AnnulusResult:
    value: float
    bound: Optional[float]
    exact: Optional[float]
    abserr: float


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def annulus_integral(x0, y0, r0: float, eps: float, beta: float, params: Params) -> AnnulusResult:
    """Integral of ``phi_p(|y-x0|^b - |y0-x0|^b) |y-y0|^-(n+ps)`` over ``B(y0,r0) \\ B(y0,eps)``.

    Opposite directions are paired so first-order terms cancel before integration.
    For ``x0 == y0`` the result also carries ``bound = |B(0,1)| r0^(b(p-1)-ps)`` and the
    exact value ``|S^(n-1)| (r0^a - eps^a) / a`` with ``a = b(p-1) - ps``.
    """
    n, p, ps = params.n, params.p, params.ps
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if x0.shape != (n,) or y0.shape != (n,):
        raise GeometryError("points must have the parameter dimension")
    if not 0 < eps < r0:
        raise GeometryError("need 0 < eps < r0")
    if not beta > ps / (p - 1):
        raise GeometryError(f"beta must exceed ps/(p-1) = {ps / (p - 1)}")
    sep = float(np.linalg.norm(x0 - y0))
    if sep > 0 and not r0 < sep / 2:
        raise GeometryError("r0 must be below |x0 - y0| / 2")
    f0 = sep ** beta

    def f(y):
        return np.linalg.norm(y - x0) ** beta

    opts = dict(limit=200, epsabs=1e-13, epsrel=1e-11)
    if n == 1:
        def g(t):
            e = np.array([t])
            return (phi_p(f(y0 + e) - f0, p) + phi_p(f(y0 - e) - f0, p)) * t ** (-1 - ps)
        val, err = integrate.quad(g, eps, r0, **opts)
    else:
        def inner(t):
            def h(th):
                e = t * np.array([math.cos(th), math.sin(th)])
                return phi_p(f(y0 + e) - f0, p) + phi_p(f(y0 - e) - f0, p)
            v, _ = integrate.quad(h, 0.0, math.pi, limit=200, epsabs=1e-13, epsrel=1e-11)
            return v * t ** (-1 - ps)
        val, err = integrate.quad(inner, eps, r0, **opts)

    bound = exact = None
    if sep == 0:
        a = beta * (p - 1) - ps
        bound = unit_ball_volume(n) * r0 ** a
        exact = n * unit_ball_volume(n) * (r0 ** a - eps ** a) / a
    return AnnulusResult(float(val), bound, exact, float(err))


def annulus_sup(x0, y0, r0: float, beta: float, params: Params, eps_fracs=(0.5, 0.1, 1e-2, 1e-3, 1e-4)) -> float:
    """Empirical bound ``sup_eps |annulus_integral|`` over a ladder of inner radii."""
    return max(abs(annulus_integral(x0, y0, r0, f * r0, beta, params).value) for f in eps_fracs)


# ---------------------------------------------------------------- binary cache

_HEADER = struct.Struct("<8sIIddQ")


def kernel_cache_name(grid: Grid, params: Params) -> str:
    return f"kernel_{grid.id[:16]}_s{params.s:g}_p{params.p:g}.bin"


def save_kernel(K: KernelMatrix, path) -> Path:
    """Header ``{magic, version, n, s, p, node_count}`` then the row-major upper triangle, little-endian."""
    path = Path(path)
    m = K.w.shape[0]
    iu = np.triu_indices(m)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, K.params.n, K.params.s, K.params.p, m))
        fh.write(np.ascontiguousarray(K.w[iu], dtype="<f8").tobytes())
    return path


def load_kernel(path, grid: Grid, params: Params) -> KernelMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValidationError(f"{path}: not a kernel cache file")
        magic, version, n, s, p, m = _HEADER.unpack(head)
        if magic != CACHE_MAGIC or version != CACHE_VERSION:
            raise ValidationError(f"{path}: not a kernel cache file")
        active = grid.active
        if (n, s, p, m) != (params.n, params.s, params.p, len(active)):
            raise ValidationError(f"{path}: cache does not match grid/params")
        tri = np.frombuffer(fh.read(), dtype="<f8")
    if len(tri) != m * (m + 1) // 2:
        raise ValidationError(f"{path}: truncated cache")
    w = np.zeros((m, m))
    iu = np.triu_indices(m)
    w[iu] = tri
    w = w + np.triu(w, 1).T
    span = int(np.max(grid.index.max(0) - grid.index.min(0)))
    table = unit_weight_table(grid.n, float(params.ps), span, NEAR_RADIUS)
    tail = tail_weight(grid.nodes[active], params, grid=grid)
    far_sum = _far_sums(grid, table, params.ps, active)
    w.setflags(write=False)
    return KernelMatrix(grid=grid, params=params, w=w, tail=tail, far_sum=far_sum, table=table, active=active)
