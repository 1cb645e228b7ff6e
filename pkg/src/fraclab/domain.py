"""Parameters, bounded open sets in 1D/2D and their cell-centred lattice discretization."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (ApproximationWarning, InvalidQ, DomainEmpty, GridMismatch,
                     SpacingTooCoarse, UnsupportedShape, ValidationError)

INTERIOR, COLLAR, FAR = 0, 1, 2
CLASS_NAMES = {INTERIOR: "interior", COLLAR: "collar", FAR: "far"}


@dataclass(frozen=True)
class Params:
    """Dimension ``n``, fractional order ``s``, integrability ``p`` and norm exponent ``q``."""

    n: int
    s: float
    p: float
    q: float = 2.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValidationError(f"n must be 1 or 2, got {self.n}")
        if not 0.0 < self.s < 1.0:
            raise ValidationError(f"s must lie in (0,1), got {self.s}")
        if not self.p > 1.0:
            raise ValidationError(f"p must exceed 1, got {self.p}")
        if not 1.0 < self.q < self.p_star:
            raise InvalidQ(f"q must lie in (1, p*={self.p_star}), got {self.q}")

    @property
    def ps(self) -> float:
        return self.p * self.s

    @property
    def p_star(self) -> float:
        if self.ps < self.n:
            return self.p * self.n / (self.n - self.ps)
        return math.inf

    @property
    def kernel_exponent(self) -> float:
        """Exponent ``n + ps`` of the singular kernel."""
        return self.n + self.ps

    def to_dict(self):
        return {"n": self.n, "s": self.s, "p": self.p, "q": self.q}


# ---------------------------------------------------------------- shapes

def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and x.ndim == 1:
        x = x[:, None]
    return x.reshape(-1, dim)


class Shape:
    dim: int
    exact_distance = True

    def contains(self, x) -> np.ndarray:
        raise NotImplementedError

    def distance_to_boundary(self, x) -> np.ndarray:
        raise NotImplementedError

    def closure_contains(self, x) -> np.ndarray:
        """Membership in the closed set; exact for the primitive shapes."""
        return self.contains(x) | _on_boundary(self, x)

    def bbox(self):
        raise NotImplementedError

    def boundary_samples(self, spacing: float) -> np.ndarray:
        raise NotImplementedError

    @property
    def diam(self) -> float:
        pts = self.boundary_samples(self._diam_spacing())
        if len(pts) > 4000:
            pts = pts[:: len(pts) // 4000 + 1]
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def _diam_spacing(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo)) / 400.0

    def __or__(self, other):
        return Union(self, other)

    def __sub__(self, other):
        return Difference(self, other)


@dataclass(frozen=True, eq=False)
class Interval(Shape):
    a: float
    b: float
    dim = 1

    def contains(self, x):
        x = _as_points(x, 1)[:, 0]
        return (x > self.a) & (x < self.b)

    def distance_to_boundary(self, x):
        x = _as_points(x, 1)[:, 0]
        return np.minimum(np.abs(x - self.a), np.abs(x - self.b))

    def bbox(self):
        return np.array([self.a]), np.array([self.b])

    def boundary_samples(self, spacing):
        return np.array([[self.a], [self.b]])

    @property
    def diam(self):
        return max(self.b - self.a, 0.0)


@dataclass(frozen=True, eq=False)
class Ball(Shape):
    center: tuple
    radius: float

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - np.asarray(self.center), axis=1) < self.radius

    def distance_to_boundary(self, x):
        x = _as_points(x, self.dim)
        return np.abs(np.linalg.norm(x - np.asarray(self.center), axis=1) - self.radius)

    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius

    def boundary_samples(self, spacing):
        c = np.asarray(self.center, dtype=float)
        if self.dim == 1:
            return np.array([c - self.radius, c + self.radius])
        m = max(16, int(math.ceil(2 * math.pi * self.radius / spacing)))
        t = 2 * math.pi * np.arange(m) / m
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)

    @property
    def diam(self):
        return 2.0 * self.radius


@dataclass(frozen=True, eq=False)
class Rectangle(Shape):
    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=1)

    def distance_to_boundary(self, x):
        x = _as_points(x, self.dim)
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        d_in = np.minimum(x - lo, hi - x).min(axis=1)
        d_out = np.linalg.norm(np.maximum(np.maximum(lo - x, x - hi), 0.0), axis=1)
        return np.where(self.contains(x), d_in, d_out)

    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def boundary_samples(self, spacing):
        lo, hi = self.bbox()
        if self.dim == 1:
            return np.array([lo, hi])
        xs = np.linspace(lo[0], hi[0], max(2, int(math.ceil((hi[0] - lo[0]) / spacing)) + 1))
        ys = np.linspace(lo[1], hi[1], max(2, int(math.ceil((hi[1] - lo[1]) / spacing)) + 1))
        edges = [np.stack([xs, np.full_like(xs, lo[1])], 1), np.stack([xs, np.full_like(xs, hi[1])], 1),
                 np.stack([np.full_like(ys, lo[0]), ys], 1), np.stack([np.full_like(ys, hi[0]), ys], 1)]
        return np.concatenate(edges)

    @property
    def diam(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(np.maximum(hi - lo, 0.0)))


@dataclass(frozen=True, eq=False)
class Cusp(Shape):
    """Closed-ish cusp ``{0 <= t <= length, |y - tip_y| <= width * t**power}``, t = x - tip_x (2D)."""

    tip: tuple
    width: float = 1.0
    power: float = 2.0
    length: float = 1.0
    dim = 2
    exact_distance = False

    def contains(self, x):
        x = _as_points(x, 2)
        t = x[:, 0] - self.tip[0]
        y = np.abs(x[:, 1] - self.tip[1])
        tt = np.clip(t, 0.0, None)
        return (t > 0) & (t < self.length) & (y < self.width * tt ** self.power)

    def closure_contains(self, x):
        x = _as_points(x, 2)
        t = x[:, 0] - self.tip[0]
        y = np.abs(x[:, 1] - self.tip[1])
        tt = np.clip(t, 0.0, None)
        return (t >= 0) & (t <= self.length) & (y <= self.width * tt ** self.power)

    def bbox(self):
        w = self.width * self.length ** self.power
        return (np.array([self.tip[0], self.tip[1] - w]),
                np.array([self.tip[0] + self.length, self.tip[1] + w]))

    def boundary_samples(self, spacing):
        m = max(64, int(math.ceil(4 * self.length / spacing)))
        # cluster samples near the tip where the curve is thin
        t = self.length * (np.arange(m + 1) / m) ** 2
        y = self.width * t ** self.power
        tip = np.asarray(self.tip, float)
        upper = np.stack([t, y], 1)
        lower = np.stack([t, -y], 1)
        w_end = self.width * self.length ** self.power
        k = max(2, int(math.ceil(2 * w_end / spacing)) + 1)
        end = np.stack([np.full(k, self.length), np.linspace(-w_end, w_end, k)], 1)
        return tip + np.concatenate([upper, lower, end])

    def distance_to_boundary(self, x):
        return _sampled_distance(self, x)


@dataclass(frozen=True, eq=False)
class Union(Shape):
    a: Shape
    b: Shape
    exact_distance = False

    @property
    def dim(self):
        return self.a.dim

    def contains(self, x):
        return self.a.contains(x) | self.b.contains(x)

    def closure_contains(self, x):
        return self.a.closure_contains(x) | self.b.closure_contains(x)

    def bbox(self):
        (la, ha), (lb, hb) = self.a.bbox(), self.b.bbox()
        return np.minimum(la, lb), np.maximum(ha, hb)

    def boundary_samples(self, spacing):
        sa, sb = self.a.boundary_samples(spacing), self.b.boundary_samples(spacing)
        return np.concatenate([sa[~self.b.contains(sa)], sb[~self.a.contains(sb)]])

    def distance_to_boundary(self, x):
        return _sampled_distance(self, x)


@dataclass(frozen=True, eq=False)
class Difference(Shape):
    a: Shape
    b: Shape
    exact_distance = False

    @property
    def dim(self):
        return self.a.dim

    def contains(self, x):
        return self.a.contains(x) & ~self.b.closure_contains(x)

    def bbox(self):
        return self.a.bbox()

    def boundary_samples(self, spacing):
        sa, sb = self.a.boundary_samples(spacing), self.b.boundary_samples(spacing)
        keep_b = self.a.contains(sb) | _on_boundary(self.a, sb)
        return np.concatenate([sa[~self.b.contains(sa)], sb[keep_b]])

    def distance_to_boundary(self, x):
        return _sampled_distance(self, x)


def _on_boundary(shape, x, tol=1e-12):
    if shape.exact_distance:
        return shape.distance_to_boundary(x) <= tol
    return np.zeros(len(_as_points(x, shape.dim)), dtype=bool)


def _sampled_distance(shape, x, spacing=None):
    x = _as_points(x, shape.dim)
    if spacing is None:
        spacing = shape._diam_spacing() / 4
    pts = shape.boundary_samples(spacing)
    warnings.warn(f"{type(shape).__name__}: boundary distance from {len(pts)} boundary samples (APPROX)",
                  ApproximationWarning, stacklevel=3)
    d, _ = cKDTree(pts).query(x)
    return np.asarray(d, dtype=float)


def shape_from_dict(d) -> Shape:
    kind = d["type"]
    if kind == "interval":
        return Interval(float(d["a"]), float(d["b"]))
    if kind == "ball":
        return Ball(tuple(float(c) for c in d["center"]), float(d["radius"]))
    if kind == "rectangle":
        return Rectangle(tuple(map(float, d["lo"])), tuple(map(float, d["hi"])))
    if kind == "cusp":
        return Cusp(tuple(map(float, d["tip"])), float(d.get("width", 1.0)),
                    float(d.get("power", 2.0)), float(d.get("length", 1.0)))
    if kind == "union":
        return Union(shape_from_dict(d["a"]), shape_from_dict(d["b"]))
    if kind == "difference":
        return Difference(shape_from_dict(d["a"]), shape_from_dict(d["b"]))
    raise UnsupportedShape(f"unknown shape type {kind!r}")


# ---------------------------------------------------------------- domain and grid

@dataclass(frozen=True, eq=False)
class Domain:
    """A bounded open set with its collar width and far-field truncation radius.

    ``collar_delta`` defaults to ``0.25 * diam`` and ``trunc_radius`` to ``4 * diam``;
    the far ball is centred at the centre of the bounding box.
    """

    shape: Shape
    collar_delta: Optional[float] = None
    trunc_radius: Optional[float] = None

    @property
    def n(self) -> int:
        return self.shape.dim

    @property
    def diam(self) -> float:
        return self.shape.diam

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.shape.bbox()
        return 0.5 * (lo + hi)

    @property
    def delta(self) -> float:
        return self.collar_delta if self.collar_delta is not None else 0.25 * self.diam

    @property
    def r_inf(self) -> float:
        return self.trunc_radius if self.trunc_radius is not None else 4.0 * self.diam


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-centred lattice covering the far ball, nodes sorted lexicographically.

    ``index`` holds integer lattice coordinates: ``nodes = offset + (index + 1/2) * h``.
    ``lattice_lo``/``lattice_hi`` are the outer cell edges in 1D (the tail starts there).
    """

    nodes: np.ndarray
    index: np.ndarray
    h: float
    vol: np.ndarray
    cls: np.ndarray
    diam: float
    center: np.ndarray
    r_inf: float
    offset: np.ndarray
    lattice_lo: Optional[float] = None
    lattice_hi: Optional[float] = None
    id: str = field(default="")

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.cls == INTERIOR)

    @property
    def active(self) -> np.ndarray:
        """Nodes carrying dense kernel rows: interior and collar."""
        return np.flatnonzero(self.cls != FAR)

    @property
    def far(self) -> np.ndarray:
        return np.flatnonzero(self.cls == FAR)

    def reflection_index(self, center=None) -> np.ndarray:
        """Permutation sending node i to the node at ``2c - x_i`` (-1 where absent)."""
        c = self.center if center is None else np.asarray(center, float)
        target = 2 * c - self.nodes
        d, j = cKDTree(self.nodes).query(target)
        j = np.where(d < 1e-9 * max(self.h, 1.0), j, -1)
        return j.astype(np.int64)

    def check(self, other_id: str, what="object"):
        if other_id != self.id:
            raise GridMismatch(f"{what} lives on grid {other_id[:12]}, expected {self.id[:12]}")


def _grid_hash(nodes, h, cls, r_inf):
    m = hashlib.sha256()
    m.update(np.ascontiguousarray(nodes).tobytes())
    m.update(np.ascontiguousarray(cls).tobytes())
    m.update(np.float64(h).tobytes())
    m.update(np.float64(r_inf).tobytes())
    return m.hexdigest()


def build_grid(domain: Domain, h: float, params: Optional[Params] = None, offset=None) -> Grid:
    """Discretize ``domain`` on the lattice ``offset + (k + 1/2) h``.

    Interior nodes lie in the open set, collar nodes within ``delta`` of its closure,
    the rest of the far ball is FAR.  Raises SpacingTooCoarse when the collar
    would hold fewer than four node layers and DomainEmpty without interior nodes.
    """
    n = domain.n
    if params is not None and params.n != n:
        raise ValidationError(f"params.n={params.n} does not match domain dimension {n}")
    if not h > 0:
        raise ValidationError("h must be positive")
    delta, r_inf = domain.delta, domain.r_inf
    if h > delta / 4 * (1 + 1e-12):
        raise SpacingTooCoarse(f"h={h} gives fewer than 4 collar layers for delta={delta}")
    diam = domain.diam
    if diam <= 0:
        raise DomainEmpty("domain has zero extent")
    c = domain.center
    lo, hi = domain.shape.bbox()
    reach = np.linalg.norm(domain.shape.boundary_samples(h) - c, axis=1).max()
    if reach > r_inf / 2 + 1e-12:
        raise ValidationError("domain closure must lie in ball(center, r_inf/2)")
    if delta >= r_inf / 2:
        raise ValidationError("collar width must be smaller than r_inf/2")
    off = np.zeros(n) if offset is None else np.broadcast_to(np.asarray(offset, float), (n,)).copy()

    # lattice index range covering [c - r_inf, c + r_inf]
    kmin = np.floor((c - r_inf - off) / h - 0.5 + 1e-9).astype(int)
    kmax = np.ceil((c + r_inf - off) / h - 0.5 - 1e-9).astype(int)
    if n == 1:
        # cells entirely inside the far interval
        k = np.arange(kmin[0], kmax[0] + 1)
        x = off[0] + (k + 0.5) * h
        keep = (x - h / 2 >= c[0] - r_inf - 1e-12) & (x + h / 2 <= c[0] + r_inf + 1e-12)
        idx = k[keep][:, None]
    else:
        ax = [np.arange(kmin[d], kmax[d] + 1) for d in range(n)]
        mesh = np.meshgrid(*ax, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], 1)
        x = off + (idx + 0.5) * h
        idx = idx[np.linalg.norm(x - c, axis=1) < r_inf]
    nodes = off + (idx + 0.5) * h
    order = np.lexsort(nodes.T[::-1])
    nodes, idx = nodes[order], idx[order]

    inside = domain.shape.contains(nodes)
    cls = np.full(len(nodes), FAR, dtype=np.int8)
    cls[inside] = INTERIOR
    # distance to the closure only matters near the domain
    lo_d, hi_d = lo - delta - h, hi + delta + h
    near = ~inside & np.all((nodes >= lo_d) & (nodes <= hi_d), axis=1)
    if near.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ApproximationWarning)
            dist = domain.shape.distance_to_boundary(nodes[near])
        sub = np.flatnonzero(near)
        cls[sub[dist < delta]] = COLLAR
    if not inside.any():
        raise DomainEmpty("no lattice node falls inside the domain")

    vol = np.full(len(nodes), h ** n)
    lat_lo = lat_hi = None
    if n == 1:
        lat_lo, lat_hi = float(nodes[0, 0] - h / 2), float(nodes[-1, 0] + h / 2)
    gid = _grid_hash(nodes, h, cls, r_inf)
    return Grid(nodes=nodes, index=idx.astype(np.int64), h=float(h), vol=vol, cls=cls, diam=float(diam),
                center=np.asarray(c, float), r_inf=float(r_inf), offset=off,
                lattice_lo=lat_lo, lattice_hi=lat_hi, id=gid)


# ---------------------------------------------------------------- grid functions

@dataclass(eq=False)
class GridFunction:
    """One value per grid node plus the constant value beyond the truncation radius."""

    values: np.ndarray
    grid_id: str
    far_value: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or not math.isfinite(self.far_value):
            raise ValidationError("grid functions must be finite")

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(np.zeros(grid.size), grid.id, 0.0)

    @classmethod
    def from_callable(cls, grid: Grid, fn, far_value=0.0, interior_only=False):
        x = grid.nodes[:, 0] if grid.n == 1 else grid.nodes
        v = np.asarray(fn(x), dtype=float) * np.ones(grid.size)
        if interior_only:
            v = np.where(grid.cls == INTERIOR, v, 0.0)
        return cls(v, grid.id, far_value)

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(c * self.values, self.grid_id, c * self.far_value)

    def __neg__(self):
        return self.scaled(-1.0)


def dist_to_boundary(grid: Grid, domain: Domain) -> GridFunction:
    """Euclidean distance to the boundary on interior nodes, 0 elsewhere.

    Composite shapes have no closed form; their distances come from boundary samples and
    an ApproximationWarning is emitted.
    """
    d = np.zeros(grid.size)
    it = grid.interior
    d[it] = domain.shape.distance_to_boundary(grid.nodes[it])
    return GridFunction(d, grid.id, 0.0)


def core_nodes(grid: Grid, domain: Domain, fraction: float = 0.5) -> np.ndarray:
    """Interior nodes at depth >= ``fraction`` times the maximal depth."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ApproximationWarning)
        d = dist_to_boundary(grid, domain).values
    it = grid.interior
    return it[d[it] >= fraction * d[it].max()]


def domain_from_dict(d) -> Domain:
    return Domain(shape_from_dict(d["shape"] if "shape" in d else d),
                  d.get("collar_delta"), d.get("trunc_radius"))


def as_points(x: Sequence, dim: int) -> np.ndarray:
    return _as_points(x, dim)
