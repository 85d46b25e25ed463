"""Wall time per iteration across thread counts and schedulers.

Speedups are only meaningful on a machine with at least as many cores as the
largest thread count; results are checked for bit-identity either way.
"""
from __future__ import annotations

import argparse
import csv
import os

import numpy as np

from mmcluster.algorithms import InitSpec, init_centroids, kmeans
from mmcluster.core import MixtureSpec, generate_mixture
from mmcluster.engine import EngineConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--threads", default="1,2,4,8")
    ap.add_argument("--scheds", default="steal,static,fifo")
    ap.add_argument("--prune", default="mti", choices=["none", "mti", "ti"])
    ap.add_argument("--out", default="bench_speedup.csv")
    args = ap.parse_args(argv)

    m, _ = generate_mixture(MixtureSpec(args.n, args.d, args.k, 4.0, seed=0))
    C0 = init_centroids(m, args.k, InitSpec("plusplus", 0))
    print(f"{os.cpu_count()} CPUs visible")
    rows, base, ref = [], {}, None
    for sched in args.scheds.split(","):
        for T in (int(t) for t in args.threads.split(",")):
            cfg = EngineConfig(threads=T, scheduler=sched, max_iters=args.iters,
                               convergence="iterations")
            res = kmeans(m, args.k, C0, cfg, args.prune, track_objective=False)
            ms = float(np.median([r.wall_ms for r in res.metrics]))
            base.setdefault(sched, ms)
            same = ref is None or np.array_equal(res.assign, ref)
            ref = res.assign if ref is None else ref
            rows.append({"scheduler": sched, "threads": T, "median_ms": f"{ms:.3f}",
                         "speedup": f"{base[sched] / ms:.3f}", "same_assign": same})
            print(f"{sched:>6} T={T}: {ms:8.1f} ms/iter  speedup {base[sched] / ms:5.2f}"
                  f"  {'same' if same else 'DIFFERENT'}")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
