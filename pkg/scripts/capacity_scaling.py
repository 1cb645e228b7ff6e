"""Capacity of B(0,r) relative to B(0,2r): per-radius lattices vs one fixed lattice.

With ``cells`` per radius the discrete problem is self-similar, so ``Cap / r^(n-ps)`` is constant
up to rounding.  On one fixed lattice the ratio drifts as r shrinks toward the spacing.

    python scripts/capacity_scaling.py --s 0.3 --p 2 -o results/capacity
"""
import argparse
from pathlib import Path

from fraclab import Params, capacity, capacity_grid
from fraclab.capacity import ball_nodes
from fraclab.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1)
    ap.add_argument("--s", type=float, default=0.3)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--radii", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05])
    ap.add_argument("-o", "--outdir", default="results/capacity")
    args = ap.parse_args()
    P = Params(args.n, args.s, args.p, min(args.p, 2.0))
    xi0 = [0.0] * args.n
    expo = args.n - P.ps
    rows = []
    # fixed lattice: spacing of the smallest radius, ambient ball of the largest
    rmax, rmin = max(args.radii), min(args.radii)
    G, KG = capacity_grid(xi0, rmax, P, cells=round(args.cells * rmax / rmin))
    for r in args.radii:
        g, K = capacity_grid(xi0, r, P, cells=args.cells)
        local = capacity(g, ball_nodes(g, xi0, r), xi0, r, K).value
        # same E on the big lattice, but the ambient ball stays B(0, 2 rmax): monotone in r, not scale-invariant
        fixed = capacity(G, ball_nodes(G, xi0, r), xi0, rmax, KG).value
        rows.append([r, local, local / r ** expo, fixed, fixed / r ** expo])
        print(f"r={r:g}: local Cap={local:.8g} ratio={local / r ** expo:.8g} | "
              f"fixed-lattice Cap(.,B(0,{2 * rmax:g}))={fixed:.8g} ratio={fixed / r ** expo:.8g}", flush=True)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"capacity_n{args.n}_s{args.s:g}_p{args.p:g}.csv",
              ["r", "cap_local", "ratio_local", "cap_fixed_ambient", "ratio_fixed_ambient"], rows)


if __name__ == "__main__":
    main()
