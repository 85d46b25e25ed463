"""Leaf counts found by hmeans, xmeans and gmeans over several seeds."""
from __future__ import annotations

import argparse
import csv
import time

from mmcluster.core import MixtureSpec, generate_mixture
from mmcluster.engine import EngineConfig
from mmcluster.hier import HierParams, run_hierarchical


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8000)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--true-k", type=int, default=8)
    ap.add_argument("--sep", type=float, default=20.0)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--kmax", type=int, default=32)
    ap.add_argument("--lmax", type=int, default=3)
    ap.add_argument("--alpha", type=float, default=1e-4)
    ap.add_argument("--out", default="bench_hier.csv")
    args = ap.parse_args(argv)

    params = HierParams(kmax=args.kmax, l_max=args.lmax, alpha=args.alpha)
    rows = []
    for seed in range(args.seeds):
        m, _ = generate_mixture(MixtureSpec(args.n, args.d, args.true_k, args.sep, seed=seed))
        for alg in ("hmeans", "xmeans", "gmeans"):
            t0 = time.perf_counter()
            res = run_hierarchical(alg, m, params, EngineConfig(task_size=2048))
            rows.append({"seed": seed, "alg": alg, "leaves": res.n_leaves,
                         "iterations": res.iterations, "seconds": f"{time.perf_counter() - t0:.3f}"})
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for alg in ("hmeans", "xmeans", "gmeans"):
        leaves = [r["leaves"] for r in rows if r["alg"] == alg]
        print(f"{alg:>6}: leaves {leaves}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
