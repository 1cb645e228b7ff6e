"""Descent solvers: Dirichlet/torsion problems and the first (s,p,q)-eigenpair.

All solvers work on the free nodes only; every other value is frozen data that
enters through coupling terms.  Steps are Barzilai-Borwein trial lengths safeguarded
by Armijo backtracking, so accepted iterates never increase the objective.  Objective
changes are evaluated as sums of per-pair differences, which keeps the Armijo test
meaningful down to residuals near machine precision.
"""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .domain import COLLAR, FAR, INTERIOR, GridFunction
from .errors import InvalidQ, NoConvergence, ValidationError
from .kernel import (KernelMatrix, pair_energy, pair_energy_delta, pair_phi, phi_p, pow_diff)

log = logging.getLogger(__name__)

RANDOM = "random"


@dataclass
class SolverConfig:
    max_iters: int = 200_000
    tol_grad: Optional[float] = None   # None -> 1e-8 * (1 + ||f||_inf)
    tol_step: float = 1e-15
    shrink: float = 0.5
    armijo: float = 1e-4
    seed: int = 0
    verbosity: int = 0
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.tol_grad is not None and not self.tol_grad > 0:
            raise ValidationError("tol_grad must be positive")
        if not self.tol_step > 0:
            raise ValidationError("tol_step must be positive")
        if not 0 < self.shrink < 1 or not 0 < self.armijo < 1:
            raise ValidationError("backtracking parameters must lie in (0,1)")

    def grad_tol(self, f_sup: float) -> float:
        return self.tol_grad if self.tol_grad is not None else 1e-8 * (1.0 + f_sup)

    def to_dict(self):
        return asdict(self)


class _Trace:
    """CSV trace ``iteration,objective,residual`` written when verbosity >= 2."""

    def __init__(self, cfg: SolverConfig, label: str):
        self.fh = None
        if cfg.verbosity >= 2:
            self.fh = open(cfg.trace_path, "a") if cfg.trace_path else sys.stderr
            self.fh.write(f"# {label}\niteration,objective,residual\n")

    def __call__(self, it, obj, res):
        if self.fh is not None:
            self.fh.write(f"{it},{obj:.17g},{res:.17g}\n")

    def close(self):
        if self.fh is not None and self.fh is not sys.stderr:
            self.fh.close()


# ---------------------------------------------------------------- reduced problem

class Reduced:
    """Energy of a grid function restricted to the free active positions ``free``.

    The frozen values enter through unary couplings ``sum_i c_i |u_i - v|^p`` (grouped by
    distinct value) or, when the data takes many values, a dense coupling block.
    """

    def __init__(self, K: KernelMatrix, free, data: np.ndarray, far_value: float, f: Optional[np.ndarray] = None):
        self.K = K
        self.p = K.p
        self.vol = K.grid.h ** K.grid.n
        A = K.active
        free = np.asarray(free, dtype=np.int64)
        self.free = free
        mask = np.zeros(len(A), bool)
        mask[free] = True
        fixed = np.flatnonzero(~mask)
        self.W = np.ascontiguousarray(K.w[np.ix_(free, free)])
        dA = data[A]
        self.unary: List[tuple] = []
        self.blocks: List[tuple] = []
        gx = dA[fixed]
        vals = np.unique(gx)
        Wfx = K.w[np.ix_(free, fixed)]
        if len(vals) <= 8:
            for v in vals:
                self.unary.append((Wfx[:, gx == v].sum(1), float(v)))
        else:
            self.blocks.append((np.ascontiguousarray(Wfx), gx.copy()))
        far = K.grid.far
        if len(far):
            df = data[far]
            if np.all(df == df[0]):
                self.unary.append((K.far_sum[free].copy(), float(df[0])))
            else:
                self.blocks.append((K.far_block(free), df.copy()))
        self.unary.append((K.tail[free].copy(), float(far_value)))
        self.f = np.zeros(len(free)) if f is None else np.asarray(f, float)
        self.linear = self.p == 2.0
        if self.linear:
            diag = self.W.sum(1) + sum(c for c, _ in self.unary) + sum(B.sum(1) for B, _ in self.blocks)
            self.A = 2.0 * (np.diag(diag) - self.W)
            self.b = 2.0 * (sum(c * v for c, v in self.unary) + sum(B @ g for B, g in self.blocks))
        self.diag = 2.0 * (self.W.sum(1) + sum(c for c, _ in self.unary) + sum(B.sum(1) for B, _ in self.blocks))

    # operator L restricted to the free rows
    def operator(self, u):
        if self.linear:
            return self.A @ u - self.b
        p = self.p
        out = pair_phi(self.W, u, p)
        for c, v in self.unary:
            out = out + c * phi_p(u - v, p)
        for B, g in self.blocks:
            out = out + np.sum(B * phi_p(u[:, None] - g[None, :], p), axis=1)
        return 2.0 * out

    def residual(self, u):
        return self.operator(u) - self.f

    def hessian(self, u, eps):
        """Curvature model of the operator, ``|t|^(p-2)`` regularized to ``(t^2+eps^2)^((p-2)/2)``.

        For ``p >= 2`` this is the tangent ``(p-1)|t|^(p-2)``.  Below 2 the secant ``|t|^(p-2)`` is
        used instead: it majorizes the energy, and Newton on the kink of ``phi_p`` at 0 overshoots.
        """
        if self.linear:
            return self.A
        p = self.p
        c0 = p - 1.0 if p >= 2.0 else 1.0

        def dphi(t):
            return c0 * (t * t + eps * eps) ** ((p - 2.0) / 2.0)

        C = self.W * dphi(u[:, None] - u[None, :])
        np.fill_diagonal(C, 0.0)
        diag = C.sum(1)
        for c, v in self.unary:
            diag = diag + c * dphi(u - v)
        for B, g in self.blocks:
            diag = diag + np.sum(B * dphi(u[:, None] - g[None, :]), axis=1)
        H = -C
        H[np.diag_indices_from(H)] = diag
        return 2.0 * H

    def energy(self, u):
        """Part of ``E`` depending on the free values (plus frozen-frozen constants excluded)."""
        p = self.p
        e = pair_energy(self.W, u, p)
        for c, v in self.unary:
            e += float(np.sum(c * np.abs(u - v) ** p))
        for B, g in self.blocks:
            e += float(np.sum(B * np.abs(u[:, None] - g[None, :]) ** p))
        return 2.0 * self.vol * e

    def energy_delta(self, u, du):
        p = self.p
        if self.linear:
            Au = self.A @ u - self.b
            return self.vol * (2.0 * float(du @ Au) + float(du @ (self.A @ du)))
        e = pair_energy_delta(self.W, u, du, p)
        for c, v in self.unary:
            e += float(np.sum(c * pow_diff(u - v, du, p)))
        for B, g in self.blocks:
            e += float(np.sum(B * pow_diff(u[:, None] - g[None, :], du[:, None], p)))
        return 2.0 * self.vol * e

    def objective(self, u):
        return self.energy(u) / self.p - self.vol * float(self.f @ u)

    def objective_delta(self, u, du):
        return self.energy_delta(u, du) / self.p - self.vol * float(self.f @ du)


@dataclass
class DescentResult:
    u: np.ndarray
    objective: float
    residual: float
    iters: int
    converged: bool
    history: List[float] = field(default_factory=list)


def _projected_residual(u, r, lo, hi):
    g = r.copy()
    if lo is not None:
        g[(u <= lo) & (r > 0)] = 0.0
    if hi is not None:
        g[(u >= hi) & (r < 0)] = 0.0
    return g


def minimize(prob: Reduced, u0: np.ndarray, cfg: SolverConfig, lo=None, hi=None, label="descent",
             precondition: Optional[bool] = None) -> DescentResult:
    """Armijo-safeguarded descent on ``prob.objective`` with optional box bounds.

    Unconstrained problems with ``p != 2`` use a direction preconditioned by a regularized
    curvature model.  The metric is SPD, so the Armijo test on the true objective still
    forces monotone descent.  Otherwise plain Barzilai-Borwein steps are taken.
    """
    boxed = lo is not None or hi is not None
    if precondition is None:
        # dense Cholesky per step: only worth it while the free set is moderate
        precondition = not boxed and not prob.linear and len(prob.free) <= 2500
    if precondition and boxed:
        raise ValueError("preconditioned steps are not available with box constraints")
    if precondition:
        return _minimize_metric(prob, u0, cfg, label)
    clip = (lambda x: np.clip(x, lo, hi)) if (lo is not None or hi is not None) else (lambda x: x)
    u = clip(np.asarray(u0, float).copy())
    r = prob.residual(u)
    tol = cfg.grad_tol(float(np.max(np.abs(prob.f), initial=0.0)))
    obj = prob.objective(u)
    hist = [obj]
    tau = 1.0 / max(float(np.max(prob.diag, initial=1.0)), 1e-300)
    trace = _Trace(cfg, label)
    it = 0
    try:
        for it in range(1, cfg.max_iters + 1):
            g = _projected_residual(u, r, lo, hi)
            res = float(np.max(np.abs(g), initial=0.0))
            trace(it - 1, obj, res)
            if res <= tol:
                return DescentResult(u, obj, res, it - 1, True, hist)
            while True:
                un = clip(u - tau * r)
                du = un - u
                step = float(np.max(np.abs(du), initial=0.0))
                if step <= cfg.tol_step * (1.0 + float(np.max(np.abs(u), initial=0.0))):
                    raise NoConvergence(f"{label}: step collapsed at residual {res:.3e}",
                                        best=u, residual=res, iters=it)
                dj = prob.objective_delta(u, du)
                if dj <= cfg.armijo * prob.vol * float(r @ du):
                    break
                tau *= cfg.shrink
            if dj > 0:
                raise AssertionError(f"{label}: objective increased by {dj}")
            rn = prob.residual(un)
            s, y = du, rn - r
            sy = float(s @ y)
            tau = float(s @ s) / sy if sy > 0 else 2.0 * tau
            u, r = un, rn
            obj = obj + dj
            hist.append(obj)
        g = _projected_residual(u, r, lo, hi)
        res = float(np.max(np.abs(g), initial=0.0))
        raise NoConvergence(f"{label}: {cfg.max_iters} iterations, residual {res:.3e} > {tol:.3e}",
                            best=u, residual=res, iters=cfg.max_iters)
    finally:
        trace.close()


def _minimize_metric(prob: Reduced, u0, cfg: SolverConfig, label) -> DescentResult:
    u = np.asarray(u0, float).copy()
    r = prob.residual(u)
    tol = cfg.grad_tol(float(np.max(np.abs(prob.f), initial=0.0)))
    obj = prob.objective(u)
    hist = [obj]
    trace = _Trace(cfg, label)
    try:
        for it in range(1, cfg.max_iters + 1):
            res = float(np.max(np.abs(r), initial=0.0))
            trace(it - 1, obj, res)
            if res <= tol:
                return DescentResult(u, obj, res, it - 1, True, hist)
            scale = float(np.max(np.abs(u), initial=0.0))
            eps = 1e-12 * scale if scale > 0 else 1.0
            try:
                d = -cho_solve(cho_factor(prob.hessian(u, eps)), r)
            except LinAlgError:
                d = -r / prob.diag
            slope = prob.vol * float(r @ d)
            if not slope < 0:
                d = -r / prob.diag
                slope = prob.vol * float(r @ d)
            tau = 1.0
            while True:
                du = tau * d
                if tau < 1e-20 or not np.any(du):
                    # curvature model useless here (p near 1, kinks); finish with plain steps
                    log.debug("%s: metric steps stalled at residual %.3e, switching to BB", label, res)
                    rest = SolverConfig(**{**cfg.to_dict(), "max_iters": cfg.max_iters - it + 1})
                    out = minimize(prob, u, rest, label=label, precondition=False)
                    out.iters += it - 1
                    out.history = hist + out.history[1:]
                    return out
                dj = prob.objective_delta(u, du)
                if dj <= cfg.armijo * tau * slope:
                    break
                tau *= cfg.shrink
            if dj > 0:
                raise AssertionError(f"{label}: objective increased by {dj}")
            u = u + du
            r = prob.residual(u)
            obj = obj + dj
            hist.append(obj)
        res = float(np.max(np.abs(r), initial=0.0))
        raise NoConvergence(f"{label}: {cfg.max_iters} iterations, residual {res:.3e} > {tol:.3e}",
                            best=u, residual=res, iters=cfg.max_iters)
    finally:
        trace.close()


# ---------------------------------------------------------------- public solvers

def _full(K: KernelMatrix, free_pos, u_free, data):
    vals = np.array(data, dtype=float, copy=True)
    vals[K.active[free_pos]] = u_free
    return vals


def solve_dirichlet(K: KernelMatrix, f: GridFunction, g: GridFunction, cfg: Optional[SolverConfig] = None,
                    u0: Optional[GridFunction] = None) -> GridFunction:
    """Minimize ``E(u)/p - sum_i vol_i f_i u_i`` over ``u = g`` outside the domain.

    ``g`` supplies collar/FAR values and the far constant; its interior values are ignored
    except as the starting guess when ``u0`` is not given.  Raises NoConvergence with the
    best iterate (as a GridFunction) in ``best``.
    """
    cfg = cfg or SolverConfig()
    K.grid.check(f.grid_id, "f")
    K.grid.check(g.grid_id, "g")
    free = K.interior_pos
    nodes = K.active[free]
    data = g.values
    prob = Reduced(K, free, data, g.far_value, f.values[nodes])
    start = (u0.values if u0 is not None else data)[nodes]
    try:
        res = minimize(prob, start, cfg, label="dirichlet")
    except NoConvergence as exc:
        exc.best = GridFunction(_full(K, free, exc.best, data), K.grid.id, g.far_value)
        raise
    log.debug("dirichlet converged in %d iterations (residual %.3e)", res.iters, res.residual)
    return GridFunction(_full(K, free, res.u, data), K.grid.id, g.far_value)


def solve_torsion(K: KernelMatrix, cfg: Optional[SolverConfig] = None) -> GridFunction:
    """Discrete torsion function: ``L u = 1`` in the domain, ``u = 0`` outside."""
    one = GridFunction(np.where(K.grid.cls == INTERIOR, 1.0, 0.0), K.grid.id, 0.0)
    return solve_dirichlet(K, one, GridFunction.zeros(K.grid), cfg)


@dataclass
class EigenResult:
    lam: float
    u: GridFunction
    residual: float
    sign_definite: bool
    iters: int
    converged: bool = True
    history: List[float] = field(default_factory=list)

    @property
    def lambda_(self) -> float:
        return self.lam


def _lq(vol, u, q):
    return float(np.sum(vol * np.abs(u) ** q)) ** (1.0 / q)


def _sign_definite(u, tol=1e-6):
    m = float(np.max(np.abs(u), initial=0.0))
    return float(np.min(u)) * float(np.max(u)) >= -tol * m * m


def _orient(u):
    k = int(np.argmax(np.abs(u)))
    return -u if u[k] < 0 else u


def solve_first_eigenpair(K: KernelMatrix, q: float, cfg: Optional[SolverConfig] = None,
                          init: Union[GridFunction, str] = RANDOM, method: str = "descent",
                          project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                          require_q_le_p: bool = True) -> EigenResult:
    """Minimize ``E(u)`` on the sphere ``||u||_q = 1`` of functions vanishing outside the domain.

    ``init`` is a GridFunction or ``"random"`` (Gaussian values from ``cfg.seed``); an all-zero
    init is replaced by the normalized torsion function.  Those two starts are oriented so
    that the node of largest ``|u|`` is positive; an explicit init keeps its own sign, so
    ``init -> -init`` returns the negated eigenfunction.  ``project`` optionally maps free
    values onto an invariant subspace (e.g. odd functions) after every step.
    ``method="inverse"`` iterates Dirichlet solves with right-hand side ``lam |u|^(q-2) u``.
    """
    cfg = cfg or SolverConfig()
    p = K.p
    if not 1.0 < q < K.params.p_star:
        raise InvalidQ(f"q={q} outside (1, p*)")
    if require_q_le_p and q > p:
        raise InvalidQ(f"q={q} > p={p}: first-eigenvalue simplicity is only asserted for q <= p")
    free = K.interior_pos
    nodes = K.active[free]
    vol = K.grid.h ** K.grid.n
    if isinstance(init, str):
        if init != RANDOM:
            raise ValidationError(f"unknown init {init!r}")
        u = np.random.default_rng(cfg.seed).standard_normal(len(free))
        orient = True
    else:
        K.grid.check(init.grid_id, "init")
        u = init.values[nodes].astype(float)
        orient = False
    if not np.any(u):
        u = solve_torsion(K, cfg).values[nodes]
        orient = True
    if project is not None:
        u = project(u)
    nrm = _lq(vol, u, q)
    if nrm == 0:
        raise ValidationError("initial guess vanishes on the domain")
    u = u / nrm
    prob = Reduced(K, free, np.zeros(K.grid.size), 0.0)

    if method == "inverse":
        run = _inverse_iteration
    elif method == "descent":
        run = _sphere_descent
    else:
        raise ValidationError(f"unknown eigen method {method!r}")
    u, lam, res, iters, ok, hist = run(K, prob, u, q, cfg, project)
    if orient:
        u = _orient(u)
    vals = np.zeros(K.grid.size)
    vals[nodes] = u
    out = EigenResult(lam, GridFunction(vals, K.grid.id, 0.0), res, _sign_definite(u), iters, ok, hist)
    if not ok:
        raise NoConvergence(f"eigen {method}: residual {res:.3e} after {iters} iterations",
                            best=out, residual=res, iters=iters)
    return out


def _eig_residual(prob, u, lam, q):
    return prob.operator(u) - lam * phi_p(u, q)


def _metric_direction(prob, u, g, project):
    scale = float(np.max(np.abs(u), initial=0.0))
    try:
        d = -cho_solve(cho_factor(prob.hessian(u, 1e-12 * scale if scale > 0 else 1.0)), g)
    except LinAlgError:
        return None
    if project is not None:
        d = project(d)
    return d if float(g @ d) < 0 else None


def _sphere_descent(K, prob, u, q, cfg, project):
    p, vol = prob.p, prob.vol
    lam = prob.energy(u)
    g = _eig_residual(prob, u, lam, q)
    if project is not None:
        g = project(g)
    # Hessian-metric steps while the free set is moderate; BB steps otherwise or once they stall
    metric = len(prob.free) <= 2500
    tau = 1.0 / float(np.max(prob.diag))
    hist = [lam]
    trace = _Trace(cfg, "eigen")
    res = float(np.max(np.abs(g)))
    try:
        for it in range(1, cfg.max_iters + 1):
            trace(it - 1, lam, res)
            tol = cfg.grad_tol(lam * float(np.max(np.abs(u)) ** (q - 1)))
            if res <= tol:
                return u, lam, res, it - 1, True, hist
            d = _metric_direction(prob, u, g, project) if metric else None
            t = 1.0 if d is not None else tau
            if d is None:
                d = -g
            slope = float(g @ d)
            stalled = False
            while True:
                du = t * d
                if float(np.max(np.abs(du))) <= cfg.tol_step * (1.0 + float(np.max(np.abs(u)))):
                    stalled = True
                    break
                dE = prob.energy_delta(u, du)
                dq = vol * float(np.sum(pow_diff(u, du, q)))       # ||v||_q^q - 1
                if dq <= -1.0:
                    t *= cfg.shrink
                    continue
                npm1 = math.expm1((p / q) * math.log1p(dq))       # ||v||_q^p - 1
                dR = (dE - lam * npm1) / (1.0 + npm1)
                if dR <= cfg.armijo * t * p * vol * slope:
                    break
                t *= cfg.shrink
            if stalled:
                if not metric:
                    return u, lam, res, it, False, hist
                metric = False      # curvature model useless here; retry with plain steps
                continue
            if dR > 0:
                raise AssertionError(f"eigen descent: Rayleigh quotient increased by {dR}")
            v = u + du
            un = v / _lq(vol, v, q)
            if project is not None:
                un = project(un)
                un = un / _lq(vol, un, q)
            lam_n = prob.energy(un)
            gn = _eig_residual(prob, un, lam_n, q)
            if project is not None:
                gn = project(gn)
            s, y = un - u, gn - g
            sy = float(s @ y)
            tau = float(s @ s) / sy if sy > 0 else 2.0 * tau
            u, g, lam = un, gn, lam_n
            res = float(np.max(np.abs(g)))
            hist.append(lam)
        return u, lam, res, cfg.max_iters, False, hist
    finally:
        trace.close()


def _inverse_iteration(K, prob, u, q, cfg, project):
    vol = prob.vol
    lam = prob.energy(u)
    hist = [lam]
    inner = SolverConfig(max_iters=cfg.max_iters, tol_grad=None, tol_step=cfg.tol_step, seed=cfg.seed)
    res = math.inf
    for it in range(1, min(cfg.max_iters, 10_000) + 1):
        prob.f = lam * phi_p(u, q)
        sol = minimize(prob, u, inner, label="inverse-iteration").u
        if project is not None:
            sol = project(sol)
        un = sol / _lq(vol, sol, q)
        lam = prob.energy(un)
        hist.append(lam)
        res = float(np.max(np.abs(_eig_residual(prob, un, lam, q))))
        u = un
        tol = cfg.grad_tol(lam * float(np.max(np.abs(u)) ** (q - 1)))
        if res <= tol:
            prob.f = np.zeros_like(u)
            return u, lam, res, it, True, hist
    prob.f = np.zeros_like(u)
    return u, lam, res, it, False, hist
