"""Experiments that confront discrete solutions with the qualitative theory.

Hopf lower bound against the torsion function, boundary-Harnack quotient bounds, the
pointwise minimum-principle inequality (and the sharpness example built on it), the hidden
convexity inequality along ``(t u^q + (1-t) v^q)^(1/q)``, and the isolation sweep for the
first eigenvalue.  Every report carries a ``provenance`` dict so it can be serialized as is.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import integrate

from .domain import (INTERIOR, Ball, Domain, Grid, GridFunction, Interval, Params, build_grid,
                     core_nodes)
from .energy import gagliardo_energy
from .errors import GridMismatch, InvalidQ, NonPositiveInput, NoConvergence, ValidationError
from .kernel import KernelMatrix, assemble_kernel, operator_at_points, unit_ball_volume
from .solvers import SolverConfig, solve_first_eigenpair

__all__ = ["HopfReport", "HarnackReport", "MinPrincipleRecord", "ConvexityRecord", "SharpnessReport",
           "IsolationReport", "hopf_constant", "harnack_bounds", "harnack_audit", "min_principle_check",
           "sharpness_oracle", "sharpness_example", "hidden_convexity_check", "isolation_experiment",
           "odd_projector"]


def _same_grid(grid: Grid, *fs):
    for f in fs:
        if f.grid_id != grid.id:
            raise GridMismatch("grid functions live on different grids")


# ---------------------------------------------------------------- Hopf

@dataclass
class HopfReport:
    C: float
    argmin: int
    x_argmin: List[float]
    positive: bool
    provenance: Dict = field(default_factory=dict)


def hopf_constant(u: GridFunction, u_tor: GridFunction, grid: Grid) -> HopfReport:
    """``C = min_i u_i / u_tor_i`` over interior nodes, plus the flag ``u > 0`` there."""
    _same_grid(grid, u, u_tor)
    it = grid.interior
    t = u_tor.values[it]
    if np.any(t <= 0):
        raise NonPositiveInput("torsion function must be positive on interior nodes")
    ratio = u.values[it] / t
    k = int(np.argmin(ratio))
    return HopfReport(float(ratio[k]), int(it[k]), grid.nodes[it[k]].tolist(),
                      bool(np.all(u.values[it] > 0)), {"grid_id": grid.id})


# ---------------------------------------------------------------- boundary Harnack

@dataclass
class HarnackReport:
    C1: float
    C2: float
    K_core: List[int]
    audit: Dict = field(default_factory=dict)
    provenance: Dict = field(default_factory=dict)


def harnack_audit(K: KernelMatrix, w: GridFunction, K_core, diam: Optional[float] = None) -> Dict:
    """Where the operator of ``w`` leaves ``[-2 diam^-(n+ps) int_K w^(p-1), 1]`` off the core.

    Returns the lower bound, the operator range and the largest violation on interior nodes
    outside ``K_core`` (0 when the hypothesis holds there).
    """
    g = K.grid
    diam = g.diam if diam is None else diam
    p, n = K.p, g.n
    core = np.asarray(K_core, dtype=np.int64)
    mass = float(np.sum(g.vol[core] * np.abs(w.values[core]) ** (p - 1)))
    lower = -2.0 * diam ** -(n + K.ps) * mass
    it = g.interior
    rest = it[~np.isin(it, core)]
    if len(rest) == 0:
        return {"lower": lower, "upper": 1.0, "op_min": math.nan, "op_max": math.nan, "violation": 0.0}
    op = operator_at_points(K, w, rest)
    viol = float(max(0.0, np.max(lower - op), np.max(op - 1.0)))
    return {"lower": lower, "upper": 1.0, "op_min": float(op.min()), "op_max": float(op.max()),
            "violation": viol}


def harnack_bounds(u: GridFunction, v: GridFunction, grid: Grid, K_core=None, domain: Optional[Domain] = None,
                   K: Optional[KernelMatrix] = None) -> HarnackReport:
    """``C1 = min u/v`` and ``C2 = max u/v`` over interior nodes.

    ``K_core`` defaults to the nodes at depth at least half the maximal depth (needs
    ``domain``).  With a kernel the hypothesis audit of both functions is attached; it is
    reported, never enforced.
    """
    _same_grid(grid, u, v)
    it = grid.interior
    if np.any(u.values[it] <= 0) or np.any(v.values[it] <= 0):
        raise NonPositiveInput("both functions must be positive on interior nodes")
    if K_core is None:
        K_core = core_nodes(grid, domain) if domain is not None else np.array([], dtype=np.int64)
    K_core = np.asarray(K_core, dtype=np.int64)
    ratio = u.values[it] / v.values[it]
    audit = {}
    if K is not None:
        K.grid.check(grid.id, "kernel")
        audit = {"u": harnack_audit(K, u, K_core), "v": harnack_audit(K, v, K_core)}
    return HarnackReport(float(ratio.min()), float(ratio.max()), K_core.tolist(), audit, {"grid_id": grid.id})


# ---------------------------------------------------------------- minimum principle

@dataclass
class MinPrincipleRecord:
    status: str                 # "pass", "fail" or "MIN_NOT_INTERIOR"
    passed: Optional[bool]
    slack: float
    node: int
    operator_value: float
    f_value: float
    provenance: Dict = field(default_factory=dict)


def min_principle_check(u: GridFunction, f: GridFunction, K: KernelMatrix, tol: float = 1e-8) -> MinPrincipleRecord:
    """At an interior node where ``u`` attains its global minimum, check ``L u >= f - tol``.

    The minimum runs over all nodes and the far value; if no interior node attains it the
    premise fails and the record says MIN_NOT_INTERIOR instead of pass/fail.
    """
    g = K.grid
    _same_grid(g, u, f)
    vals = u.values
    m = min(float(vals.min()), float(u.far_value))
    it = g.interior
    at_min = it[vals[it] == m]
    if len(at_min) == 0:
        return MinPrincipleRecord("MIN_NOT_INTERIOR", None, math.nan, -1, math.nan, math.nan, {"grid_id": g.id})
    i = int(at_min[0])
    op = float(operator_at_points(K, u, np.array([i]))[0])
    slack = op - float(f.values[i])
    ok = slack >= -tol
    return MinPrincipleRecord("pass" if ok else "fail", bool(ok), slack, i, op, float(f.values[i]),
                              {"grid_id": g.id, "tol": tol})


@dataclass
class SharpnessReport:
    beta: float
    h: float
    discrete: float
    oracle: float
    rel_err: float
    check: MinPrincipleRecord
    provenance: Dict = field(default_factory=dict)


def sharpness_oracle(params: Params, beta: float) -> float:
    """``-2 int u^(p-1) |y|^-(n+ps) dy`` for ``u = |y|^beta`` in the unit ball and 1 outside."""
    n, p, ps = params.n, params.p, params.ps
    sphere = n * unit_ball_volume(n)
    inner, _ = integrate.quad(lambda r: r ** (beta * (p - 1) - 1 - ps), 0.0, 1.0, limit=200)
    outer, _ = integrate.quad(lambda r: r ** (-1 - ps), 1.0, math.inf, limit=200)
    return -2.0 * sphere * (inner + outer)


def sharpness_example(params: Params, h: float, beta: float, collar_delta: float = 0.5) -> SharpnessReport:
    """Discrete operator at 0 of ``u = |x|^beta`` in ``B(0,1)``, ``u = 1`` outside, vs the oracle.

    The lattice is shifted by ``h/2`` so that the origin is a node.
    """
    if not beta > params.ps / (params.p - 1):
        raise ValidationError("beta must exceed ps/(p-1) for the integral to converge")
    n = params.n
    shape = Interval(-1.0, 1.0) if n == 1 else Ball((0.0, 0.0), 1.0)
    grid = build_grid(Domain(shape, collar_delta=collar_delta), h, params, offset=-0.5 * h)
    K = assemble_kernel(grid, params)
    r = np.linalg.norm(grid.nodes, axis=1)
    u = GridFunction(np.where(grid.cls == INTERIOR, r ** beta, 1.0), grid.id, 1.0)
    zero = int(np.argmin(r))
    if r[zero] > 1e-12 * h:
        raise ValidationError("origin is not a lattice node")
    oracle = sharpness_oracle(params, beta)
    f = GridFunction(np.where(np.arange(grid.size) == zero, oracle, 0.0), grid.id, 0.0)
    rec = min_principle_check(u, f, K)
    return SharpnessReport(beta, h, rec.operator_value, oracle, abs(rec.operator_value - oracle) / abs(oracle), rec,
                           {"grid_id": grid.id, "params": params.to_dict()})


# ---------------------------------------------------------------- hidden convexity

@dataclass
class ConvexityRecord:
    t: float
    q: float
    E_u: float
    E_v: float
    E_sigma: float
    slack: float
    tol: float
    holds: bool


def hidden_convexity_check(u: GridFunction, v: GridFunction, t: float, q: float, K: KernelMatrix,
                           rel_tol: float = 1e-9) -> ConvexityRecord:
    """``slack = t E(u) + (1-t) E(v) - E(sigma_t)`` with ``sigma_t = (t u^q + (1-t) v^q)^(1/q)``."""
    g = K.grid
    _same_grid(g, u, v)
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t must lie in [0, 1]")
    if q > K.p:
        raise InvalidQ(f"q={q} > p={K.p}")
    it = g.cls == INTERIOR
    if np.any(u.values[it] <= 0) or np.any(v.values[it] <= 0):
        raise NonPositiveInput("u and v must be positive on interior nodes")
    if np.any(u.values[~it] != 0) or np.any(v.values[~it] != 0) or u.far_value or v.far_value:
        raise ValidationError("u and v must vanish outside the domain")
    sig = np.zeros(g.size)
    sig[it] = (t * u.values[it] ** q + (1.0 - t) * v.values[it] ** q) ** (1.0 / q)
    eu, ev = gagliardo_energy(K, u), gagliardo_energy(K, v)
    es = gagliardo_energy(K, GridFunction(sig, g.id, 0.0))
    slack = t * eu + (1.0 - t) * ev - es
    tol = rel_tol * (eu + ev)
    return ConvexityRecord(t, q, eu, ev, es, slack, tol, bool(slack >= -tol))


# ---------------------------------------------------------------- isolation sweep

@dataclass
class IsolationReport:
    trials: int
    converged_count: int
    lambda_min: float
    gap: float
    offenders: List[Dict]
    gap_frac: float
    records: List[Dict] = field(default_factory=list)
    provenance: Dict = field(default_factory=dict)


def odd_projector(K: KernelMatrix, center=None):
    """Projection of interior values onto functions odd under reflection through ``center``.

    Returns None when the interior node set is not reflection symmetric.
    """
    g = K.grid
    refl = g.reflection_index(center)
    nodes = g.active[K.interior_pos]
    mirror = refl[nodes]
    pos = np.full(g.size, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    if np.any(mirror < 0) or np.any(pos[mirror] < 0):
        return None
    perm = pos[mirror]

    def project(x):
        return 0.5 * (x - x[perm])

    return project


def isolation_experiment(K: KernelMatrix, q: float, trials: int, cfg: Optional[SolverConfig] = None,
                         gap_frac: float = 0.10, workers: int = 1) -> IsolationReport:
    """Eigen descent from ``trials`` random starts, every other one forced to change sign.

    Forced trials start from (and stay in) the odd functions when the domain is reflection
    symmetric; otherwise they only start from a mean-free random vector.  Per-trial seeds
    are spawned from ``cfg.seed``.  Offenders are converged sign-changing states with
    ``lam < lambda_min (1 + gap_frac)``.
    """
    cfg = cfg or SolverConfig()
    if q > K.p:
        raise InvalidQ(f"q={q} > p={K.p}")
    prov = {"grid_id": K.grid.id, "params": K.params.to_dict(), "q": q, "cfg": cfg.to_dict(),
            "gap_frac": gap_frac}
    if trials <= 0:
        return IsolationReport(0, 0, math.nan, math.nan, [], gap_frac, [], prov)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(trials)]
    project = odd_projector(K)
    nodes = K.active[K.interior_pos]

    def run(i):
        forced = i % 2 == 1
        sub = SolverConfig(**{**cfg.to_dict(), "seed": seeds[i], "trace_path": None})
        x = np.random.default_rng(seeds[i]).standard_normal(len(nodes))
        proj = None
        if forced:
            if project is not None:
                proj = project
                x = project(x)
            else:
                x = x - x.mean()
        vals = np.zeros(K.grid.size)
        vals[nodes] = x
        init = GridFunction(vals, K.grid.id, 0.0)
        rec = {"trial": i, "seed": seeds[i], "forced_sign_change": forced}
        try:
            res = solve_first_eigenpair(K, q, sub, init=init, project=proj)
        except NoConvergence as exc:
            res = exc.best
        rec.update(lam=float(res.lam), residual=float(res.residual), converged=bool(res.converged),
                   sign_definite=bool(res.sign_definite), iters=int(res.iters))
        return rec

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(run, range(trials)))
    else:
        records = [run(i) for i in range(trials)]
    conv = [r for r in records if r["converged"]]
    lam_min = min((r["lam"] for r in conv), default=math.nan)
    changing = [r for r in conv if not r["sign_definite"]]
    gap = min((r["lam"] for r in changing), default=math.inf) - lam_min if conv else math.nan
    offenders = [{"trial": r["trial"], "lam": r["lam"], "residual": r["residual"]}
                 for r in changing if r["lam"] < lam_min * (1.0 + gap_frac)]
    return IsolationReport(trials, len(conv), lam_min, gap, offenders, gap_frac, records, prov)
