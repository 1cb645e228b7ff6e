"""Command line: ``fraclab <subcommand> -c config.json [-o outdir] [--seed N] [--threads N]``.

Exit codes: 0 success, 2 validation error, 3 NO_CONVERGENCE, 4 I/O error (1 when the
selftest finds a failing identity).  Per-node data goes to CSV, scalar summaries to JSON;
every JSON summary embeds the config hash and the SHA-256 of each CSV written with it.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from . import __version__
from .capacity import ball_nodes, capacity, capacity_grid, wiener_integrand, write_wiener_csv
from .domain import INTERIOR, Domain, GridFunction, Params, build_grid, shape_from_dict
from .energy import lq_norm, torsion_objective
from .errors import ApproximationWarning, FraclabError, NoConvergence, ValidationError
from .kernel import assemble_kernel
from .lab import harnack_bounds, hopf_constant, isolation_experiment
from .reporting import dumps, jsonable, write_csv
from .solvers import SolverConfig, solve_dirichlet, solve_first_eigenpair, solve_torsion

log = logging.getLogger("fraclab")

SUBCOMMANDS = ("torsion", "dirichlet", "eigen", "capacity", "wiener", "hopf", "harnack", "isolation", "selftest")

SHAPE_KEYS = {
    "interval": {"type", "a", "b"},
    "ball": {"type", "center", "radius"},
    "rectangle": {"type", "lo", "hi"},
    "cusp": {"type", "tip", "width", "power", "length"},
    "union": {"type", "a", "b"},
    "difference": {"type", "a", "b"},
}

EXPERIMENT_KEYS = {
    "torsion": set(),
    "dirichlet": {"f", "g"},
    "eigen": {"init", "method"},
    "capacity": {"xi0", "r", "cells", "outer", "set"},
    "wiener": {"xi0", "r0", "k_max", "cells"},
    "hopf": set(),
    "harnack": {"core_fraction"},
    "isolation": {"trials", "gap_frac"},
    "selftest": set(),
}


# ---------------------------------------------------------------- configuration

def _strict(block: Dict, allowed, where: str):
    if not isinstance(block, dict):
        raise ValidationError(f"{where} must be a JSON object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _check_shape(d, where="domain.shape"):
    _strict(d, {"type", "a", "b", "center", "radius", "lo", "hi", "tip", "width", "power", "length"}, where)
    kind = d.get("type")
    if kind not in SHAPE_KEYS:
        raise ValidationError(f"{where}.type must be one of {sorted(SHAPE_KEYS)}")
    _strict(d, SHAPE_KEYS[kind], f"{where} ({kind})")
    if kind in ("union", "difference"):
        _check_shape(d["a"], where + ".a")
        _check_shape(d["b"], where + ".b")


@dataclass
class RunConfig:
    params: Params
    domain: Optional[Dict]
    grid: Dict
    solver: SolverConfig
    experiment: Dict
    output: Dict
    seed: int
    raw: Dict = field(repr=False, default_factory=dict)

    TOP_KEYS = ("params", "domain", "grid", "solver", "experiment", "output", "seed")

    @classmethod
    def from_dict(cls, d: Dict, subcommand: str, seed: Optional[int] = None) -> "RunConfig":
        _strict(d, cls.TOP_KEYS, "config")
        if "params" not in d:
            raise ValidationError("config needs a params block")
        _strict(d["params"], {"n", "s", "p", "q"}, "params")
        try:
            params = Params(**d["params"])
        except TypeError as exc:
            raise ValidationError(f"params: {exc}") from None
        dom = d.get("domain")
        if dom is not None:
            _strict(dom, {"shape"}, "domain")
            if "shape" not in dom:
                raise ValidationError("domain needs a shape")
            _check_shape(dom["shape"])
        grid = dict(d.get("grid", {}))
        _strict(grid, {"h", "collar_delta", "trunc_radius", "node_budget"}, "grid")
        sol = dict(d.get("solver", {}))
        sol_fields = {f.name for f in dataclasses.fields(SolverConfig)} - {"seed", "trace_path"}
        _strict(sol, sol_fields, "solver")
        exp = dict(d.get("experiment", {}))
        _strict(exp, EXPERIMENT_KEYS[subcommand], f"experiment ({subcommand})")
        out = dict(d.get("output", {}))
        _strict(out, {"dir", "trace"}, "output")
        s = int(d.get("seed", 0) if seed is None else seed)
        if s < 0:
            raise ValidationError("seed must be non-negative")
        resolved = {k: d[k] for k in cls.TOP_KEYS if k in d}
        resolved["seed"] = s
        return cls(params, dom, grid, SolverConfig(**sol, seed=s), exp, out, s, resolved)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def build_domain(self) -> Domain:
        if self.domain is None:
            raise ValidationError("this subcommand needs a domain block")
        return Domain(shape_from_dict(self.domain["shape"]), self.grid.get("collar_delta"),
                      self.grid.get("trunc_radius"))

    def build(self):
        dom = self.build_domain()
        if "h" not in self.grid:
            raise ValidationError("grid.h is required")
        if dom.n != self.params.n:
            raise ValidationError("domain dimension differs from params.n")
        g = build_grid(dom, float(self.grid["h"]), self.params)
        budget = int(self.grid.get("node_budget", 20000))
        return dom, g, assemble_kernel(g, self.params, node_budget=budget)


def load_config(path, subcommand, seed=None) -> RunConfig:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(d, subcommand, seed)


# ---------------------------------------------------------------- report writing

class Writer:
    def __init__(self, outdir: Path, cfg: RunConfig, subcommand: str):
        self.outdir = outdir
        self.cfg = cfg
        self.subcommand = subcommand
        self.files: Dict[str, str] = {}
        outdir.mkdir(parents=True, exist_ok=True)

    def csv(self, name, header, rows):
        path = self.outdir / name
        write_csv(path, header, rows)
        self.files[name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def nodes_csv(self, name, grid, columns: Dict[str, np.ndarray], nodes=None):
        nodes = grid.interior if nodes is None else nodes
        coords = ["x"] if grid.n == 1 else ["x", "y"]
        header = coords + list(columns)
        rows = ([*map(float, grid.nodes[i])] + [float(c[i]) for c in columns.values()] for i in nodes)
        self.csv(name, header, rows)

    def summary(self, name, data: Dict[str, Any]):
        doc = {"config_hash": self.cfg.hash, "subcommand": self.subcommand, "version": __version__,
               "config": self.cfg.raw, "files": dict(sorted(self.files.items())), **jsonable(data)}
        (self.outdir / name).write_text(dumps(doc))


# ---------------------------------------------------------------- subcommands

def _torsion(cfg: RunConfig, w: Writer):
    dom, g, K = cfg.build()
    u = solve_torsion(K, cfg.solver)
    w.nodes_csv("torsion.csv", g, {"u": u.values})
    w.summary("torsion.json", {"grid_id": g.id, "nodes": int(len(g.interior)), "max_u": float(u.values.max()),
                               "objective": torsion_objective(K, u)})


def _dirichlet(cfg: RunConfig, w: Writer):
    dom, g, K = cfg.build()
    fval = float(cfg.experiment.get("f", 1.0))
    gval = float(cfg.experiment.get("g", 0.0))
    it = g.cls == INTERIOR
    f = GridFunction(np.where(it, fval, 0.0), g.id, 0.0)
    gd = GridFunction(np.where(it, 0.0, gval), g.id, gval)
    u = solve_dirichlet(K, f, gd, cfg.solver)
    w.nodes_csv("dirichlet.csv", g, {"u": u.values})
    w.summary("dirichlet.json", {"grid_id": g.id, "f": fval, "g": gval, "max_u": float(u.values.max()),
                                 "min_u": float(u.values.min())})


def _eigen(cfg: RunConfig, K, init_name):
    if init_name == "random":
        init = "random"
    elif init_name == "torsion":
        init = solve_torsion(K, cfg.solver)
    else:
        raise ValidationError("experiment.init must be 'random' or 'torsion'")
    method = cfg.experiment.get("method", "descent")
    return solve_first_eigenpair(K, cfg.params.q, cfg.solver, init=init, method=method)


def _eigen_cmd(cfg: RunConfig, w: Writer):
    dom, g, K = cfg.build()
    e = _eigen(cfg, K, cfg.experiment.get("init", "random"))
    w.nodes_csv("eigen.csv", g, {"u": e.u.values})
    w.summary("eigen.json", {"grid_id": g.id, "lambda": e.lam, "residual": e.residual,
                             "sign_definite": e.sign_definite, "iters": e.iters,
                             "norm_q": lq_norm(e.u, cfg.params.q, g)})


def _capacity_cmd(cfg: RunConfig, w: Writer):
    ex = cfg.experiment
    if "xi0" not in ex or "r" not in ex:
        raise ValidationError("capacity needs experiment.xi0 and experiment.r")
    xi0, r = np.atleast_1d(np.asarray(ex["xi0"], float)), float(ex["r"])
    outer = float(ex.get("outer", 2.0))
    g, K = capacity_grid(xi0, r, cfg.params, int(ex.get("cells", 16)), outer)
    which = ex.get("set", "ball")
    if which == "ball":
        E = ball_nodes(g, xi0, r)
    elif which == "complement":
        E = ball_nodes(g, xi0, r, exclude=cfg.build_domain().shape)
    else:
        raise ValidationError("experiment.set must be 'ball' or 'complement'")
    res = capacity(g, E, xi0, r, K, cfg.solver, outer=outer)
    w.nodes_csv("capacity.csv", g, {"potential": res.potential.values})
    w.summary("capacity.json", {"grid_id": g.id, "value": res.value, "r": r, "xi0": xi0,
                                "normalized": res.value / r ** (cfg.params.n - cfg.params.ps),
                                "E_nodes": int(len(E)), "residual": res.residual, "iters": res.iters})


def _wiener_cmd(cfg: RunConfig, w: Writer, threads: int):
    ex = cfg.experiment
    for key in ("xi0", "r0", "k_max"):
        if key not in ex:
            raise ValidationError(f"wiener needs experiment.{key}")
    rep = wiener_integrand(cfg.build_domain(), ex["xi0"], float(ex["r0"]), int(ex["k_max"]), cfg.params,
                           cfg.solver, int(ex.get("cells", 16)), workers=threads)
    write_wiener_csv(rep, w.outdir / "wiener_report.csv")
    w.files["wiener_report.csv"] = hashlib.sha256((w.outdir / "wiener_report.csv").read_bytes()).hexdigest()
    w.summary("wiener.json", {"dyadic_sum": rep.dyadic_sum, "diverging": rep.diverging, "slope": rep.slope,
                              "usable": rep.usable, "errors": rep.errors, "cells": rep.cells,
                              "verdict_rule": "last-third mean >= 0.5 * first-third mean (heuristic)"})


def _pair(cfg: RunConfig):
    dom, g, K = cfg.build()
    ut = solve_torsion(K, cfg.solver)
    e = solve_first_eigenpair(K, cfg.params.q, cfg.solver, init=ut)
    return dom, g, K, ut, e


def _hopf_cmd(cfg: RunConfig, w: Writer):
    dom, g, K, ut, e = _pair(cfg)
    rep = hopf_constant(e.u, ut, g)
    w.nodes_csv("hopf.csv", g, {"u_tor": ut.values, "u": e.u.values,
                                "ratio": np.divide(e.u.values, ut.values, out=np.zeros(g.size),
                                                   where=ut.values > 0)})
    w.summary("hopf.json", {"report": rep, "lambda": e.lam, "eigen_residual": e.residual})


def _harnack_cmd(cfg: RunConfig, w: Writer):
    dom, g, K, ut, e = _pair(cfg)
    from .domain import core_nodes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ApproximationWarning)
        core = core_nodes(g, dom, float(cfg.experiment.get("core_fraction", 0.5)))
    rep = harnack_bounds(ut, e.u, g, K_core=core, K=K)
    w.nodes_csv("harnack.csv", g, {"u_tor": ut.values, "u": e.u.values, "ratio": ut.values / np.where(
        e.u.values > 0, e.u.values, 1.0)})
    w.summary("harnack.json", {"C1": rep.C1, "C2": rep.C2, "core_size": len(rep.K_core), "audit": rep.audit,
                               "lambda": e.lam})


def _isolation_cmd(cfg: RunConfig, w: Writer, threads: int):
    dom, g, K = cfg.build()
    ex = cfg.experiment
    rep = isolation_experiment(K, cfg.params.q, int(ex.get("trials", 50)), cfg.solver,
                               float(ex.get("gap_frac", 0.10)), workers=threads)
    w.csv("isolation.csv", ["trial", "seed", "forced_sign_change", "lam", "residual", "converged", "sign_definite",
                            "iters"],
          ([r["trial"], r["seed"], int(r["forced_sign_change"]), r["lam"], r["residual"], int(r["converged"]),
            int(r["sign_definite"]), r["iters"]] for r in rep.records))
    w.summary("isolation.json", {"trials": rep.trials, "converged_count": rep.converged_count,
                                 "lambda_min": rep.lambda_min, "gap": rep.gap, "gap_frac": rep.gap_frac,
                                 "offenders": rep.offenders, "provenance": rep.provenance})


# ---------------------------------------------------------------- selftest

def selftest(verbose=True) -> bool:
    """Exact identities: operator, energy, norms and report invariants on tiny grids."""
    from .kernel import apply_operator, phi_p
    from .energy import gagliardo_energy, rayleigh_quotient

    checks = []
    P = Params(1, 0.5, 2.0, 2.0)
    g = build_grid(Domain(shape_from_dict({"type": "interval", "a": -1, "b": 1})), 1 / 16, P)
    K = assemble_kernel(g, P)
    rng = np.random.default_rng(0)
    it = g.cls == INTERIOR
    u = GridFunction(np.where(it, rng.random(g.size), 0.0), g.id, 0.0)
    c = GridFunction(np.full(g.size, 3.25), g.id, 3.25)
    checks.append(("phi_p examples", phi_p(-3.0, 2) == -3.0 and phi_p(2.0, 3) == 4.0 and phi_p(-4.0, 1.5) == -2.0))
    checks.append(("constants annihilated", float(np.max(np.abs(apply_operator(K, c).values))) == 0.0))
    checks.append(("zero energy of zero", gagliardo_energy(K, GridFunction.zeros(g)) == 0.0))
    checks.append(("kernel symmetry", bool(np.array_equal(K.w, K.w.T))))
    e1, e2 = gagliardo_energy(K, u), gagliardo_energy(K, u.scaled(2.0))
    checks.append(("energy homogeneity", abs(e2 - 4.0 * e1) <= 1e-12 * e2))
    one = GridFunction(np.where(it, 1.0, 0.0), g.id, 0.0)
    checks.append(("L^2 norm of 1 on (-1,1)", abs(lq_norm(one, 2.0, g) - math.sqrt(2.0)) <= 1e-12))
    r1, r2 = rayleigh_quotient(K, u, 2.0), rayleigh_quotient(K, u.scaled(-2.0), 2.0)
    checks.append(("Rayleigh scale invariance", abs(r1 - r2) <= 1e-12 * r1))
    ut = solve_torsion(K)
    checks.append(("Hopf C of 3 u_tor", abs(hopf_constant(ut.scaled(3.0), ut, g).C - 3.0) <= 1e-15 * 3))
    hb = harnack_bounds(ut.scaled(2.0), ut, g)
    checks.append(("Harnack bounds of 2v, v", hb.C1 == 2.0 and hb.C2 == 2.0))
    checks.append(("isolation with zero trials", isolation_experiment(K, 2.0, 0).trials == 0))
    ok = True
    for name, passed in checks:
        ok &= bool(passed)
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok


# ---------------------------------------------------------------- entry points

def run(subcommand: str, config_path=None, outdir=None, seed=None, threads: int = 1) -> int:
    """Run one subcommand; returns the process exit code."""
    if subcommand not in SUBCOMMANDS:
        print(f"VALIDATION: unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    if threads < 1:
        print("VALIDATION: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        import numba
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    except Exception:  # pragma: no cover - numba always present in practice
        pass
    try:
        if subcommand == "selftest":
            return 0 if selftest() else 1
        if config_path is None:
            raise ValidationError(f"{subcommand} needs -c <config.json>")
        cfg = load_config(config_path, subcommand, seed)
        out = Path(outdir) if outdir is not None else Path(cfg.output.get("dir", "."))
        if cfg.output.get("trace"):
            cfg.solver.trace_path = str(out / f"{subcommand}_trace.csv")
            cfg.solver.verbosity = max(cfg.solver.verbosity, 2)
        w = Writer(out, cfg, subcommand)
        dispatch = {
            "torsion": lambda: _torsion(cfg, w),
            "dirichlet": lambda: _dirichlet(cfg, w),
            "eigen": lambda: _eigen_cmd(cfg, w),
            "capacity": lambda: _capacity_cmd(cfg, w),
            "wiener": lambda: _wiener_cmd(cfg, w, threads),
            "hopf": lambda: _hopf_cmd(cfg, w),
            "harnack": lambda: _harnack_cmd(cfg, w),
            "isolation": lambda: _isolation_cmd(cfg, w, threads),
        }
        dispatch[subcommand]()
        return 0
    except NoConvergence as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except FraclabError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        print(f"VALIDATION: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"IO: {exc}", file=sys.stderr)
        return 4


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fraclab", description="Fractional p-Laplacian numerical laboratory.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("-c", "--config", help="JSON run configuration")
    ap.add_argument("-o", "--outdir", help="output directory (default: output.dir or .)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (numba and per-trial pools)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    warnings.simplefilter("ignore", ApproximationWarning)
    return run(args.subcommand, args.config, args.outdir, args.seed, args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
