"""Wiener integrand at a smooth boundary point (disk) and at an outward cusp tip, for several s.

    python scripts/wiener_sweep.py --s 0.25 0.4 --k-max 5 -o results/wiener
"""
import argparse
import time
from pathlib import Path

from fraclab import Ball, Cusp, Difference, Domain, Params, wiener_integrand
from fraclab.capacity import write_wiener_csv

SHAPES = {
    "disk": (Domain(Ball((0.0, 0.0), 1.0)), (1.0, 0.0)),
    "cusp": (Domain(Difference(Ball((0.0, 0.0), 1.0), Cusp((0.0, 0.0), 2.0, 2.0, 0.5))), (0.0, 0.0)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s", type=float, nargs="+", default=[0.25, 0.4])
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--r0", type=float, default=0.25)
    ap.add_argument("--k-max", type=int, default=5)
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-o", "--outdir", default="results/wiener")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for s in args.s:
        P = Params(2, s, args.p, min(args.p, 2.0))
        for name, (dom, xi0) in SHAPES.items():
            t0 = time.perf_counter()
            rep = wiener_integrand(dom, xi0, args.r0, args.k_max, P, cells=args.cells, workers=args.threads)
            write_wiener_csv(rep, out / f"wiener_{name}_s{s:g}_p{args.p:g}.csv")
            vals = " ".join(f"{v:.4g}" for v in rep.integrand)
            print(f"s={s:g} {name}: integrand [{vals}] slope {rep.slope:.4g} "
                  f"{'diverging' if rep.diverging else 'not diverging'} [{time.perf_counter() - t0:.1f}s]",
                  flush=True)
            for e in rep.errors:
                print("  unusable:", e)


if __name__ == "__main__":
    main()
