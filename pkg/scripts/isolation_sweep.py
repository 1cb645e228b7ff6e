"""Spectral-gap sweep over p (and q <= p) on (-1,1) from many random starts.

    python scripts/isolation_sweep.py --p 1.5 2 3 4 --trials 50 -o results/isolation
"""
import argparse
import time
from pathlib import Path

from fraclab import Domain, Interval, Params, SolverConfig, assemble_kernel, build_grid, isolation_experiment
from fraclab.reporting import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, nargs="+", default=[1.5, 2.0, 3.0, 4.0])
    ap.add_argument("--s", type=float, default=0.5)
    ap.add_argument("--h", type=float, default=1 / 32)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--gap-frac", type=float, default=0.10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--outdir", default="results/isolation")
    args = ap.parse_args()
    rows = []
    for p in args.p:
        for q in sorted({min(p, 2.0), p}):
            P = Params(1, args.s, p, q)
            g = build_grid(Domain(Interval(-1, 1)), args.h, P)
            K = assemble_kernel(g, P)
            t0 = time.perf_counter()
            rep = isolation_experiment(K, q, args.trials, SolverConfig(seed=args.seed), args.gap_frac)
            dt = time.perf_counter() - t0
            rows.append([p, q, rep.trials, rep.converged_count, rep.lambda_min, rep.gap, len(rep.offenders), dt])
            print(f"p={p:g} q={q:g}: {rep.converged_count}/{rep.trials} converged, lambda_min={rep.lambda_min:.6f} "
                  f"gap={rep.gap:.5f} offenders={len(rep.offenders)} [{dt:.1f}s]", flush=True)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "isolation_sweep.csv",
              ["p", "q", "trials", "converged", "lambda_min", "gap", "offenders", "seconds"], rows)


if __name__ == "__main__":
    main()
