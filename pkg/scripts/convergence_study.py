"""Refinement study on (-1,1): torsion profile, first eigenvalue, Hopf and Harnack constants.

    python scripts/convergence_study.py --p 2 --s 0.5 --levels 5 -o results/convergence
"""
import argparse
import math
import time
from pathlib import Path

import numpy as np

from fraclab import (Domain, Interval, Params, assemble_kernel, build_grid, harnack_bounds, hopf_constant,
                     solve_first_eigenpair, solve_torsion)
from fraclab.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--s", type=float, default=0.5)
    ap.add_argument("--q", type=float, default=None, help="defaults to min(p, 2)")
    ap.add_argument("--h0", type=float, default=1 / 16)
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("-o", "--outdir", default="results/convergence")
    args = ap.parse_args()
    q = args.q or min(args.p, 2.0)
    P = Params(1, args.s, args.p, q)
    dom = Domain(Interval(-1, 1))
    rows = []
    for k in range(args.levels):
        h = args.h0 / 2 ** k
        t0 = time.perf_counter()
        g = build_grid(dom, h, P)
        K = assemble_kernel(g, P)
        ut = solve_torsion(K)
        eig = solve_first_eigenpair(K, q, init=ut)
        hopf = hopf_constant(eig.u, ut, g).C
        hb = harnack_bounds(ut, eig.u, g)
        rows.append([h, len(g.interior), float(ut.values.max()), eig.lam, hopf, hb.C1, hb.C2,
                     time.perf_counter() - t0])
        print(f"h=1/{round(1 / h)}: max u_tor={rows[-1][2]:.8f} Lambda={eig.lam:.8f} Hopf={hopf:.5f} "
              f"Harnack=({hb.C1:.5f}, {hb.C2:.5f}) [{rows[-1][-1]:.1f}s]", flush=True)
    lam = np.array([r[3] for r in rows])
    if len(lam) >= 3:
        d = np.diff(lam)
        orders = np.log2(np.abs(d[:-1] / d[1:]))
        print("observed eigenvalue orders:", ", ".join(f"{o:.3f}" for o in orders))
        print(f"order-1 extrapolation: {2 * lam[-1] - lam[-2]:.8f}")
    if args.p == 2.0 and args.s == 0.5:
        print(f"reference (p=2, s=1/2): Lambda = {2 * math.pi * 1.1577738836977:.8f}, "
              f"max u_tor = {1 / (2 * math.pi):.8f}")
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"convergence_p{args.p:g}_s{args.s:g}.csv",
              ["h", "nodes", "max_u_tor", "lambda", "hopf_C", "harnack_C1", "harnack_C2", "seconds"], rows)


if __name__ == "__main__":
    main()
