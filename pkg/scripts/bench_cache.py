"""External-memory k-means with no cache, the lazily refreshed cache and LRU.

Reports bytes read from storage and the per-iteration hit rate.
"""
from __future__ import annotations

import argparse
import csv
import tempfile
from pathlib import Path

import numpy as np

from mmcluster.algorithms import InitSpec
from mmcluster.core import MixtureSpec, generate_mixture, save_matrix
from mmcluster.engine import EngineConfig
from mmcluster.extmem import SemConfig, sem_kmeans
from mmcluster.metrics import COLUMNS, metrics_rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=50_000)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--k", type=int, default=50)
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--icache", type=int, default=5)
    ap.add_argument("--cache-frac", type=float, default=1.0,
                    help="cache capacity as a fraction of the dataset size")
    ap.add_argument("--prune", default="mti", choices=["none", "mti", "ti"])
    ap.add_argument("--out", default="bench_cache.csv")
    args = ap.parse_args(argv)

    m, _ = generate_mixture(MixtureSpec(args.n, args.d, args.k, 10.0, seed=0))
    cap = int(args.cache_frac * args.n * args.d * 8)
    cfg = EngineConfig(max_iters=args.iters, convergence="iterations")
    variants = {"off": SemConfig(),
                "lazy": SemConfig(cache_bytes=cap, cache_mode="lazy", icache=args.icache),
                "lru": SemConfig(cache_bytes=cap, cache_mode="lru")}
    with tempfile.TemporaryDirectory() as tmp, open(args.out, "w", newline="") as fh:
        path = Path(tmp) / "data.bin"
        save_matrix(path, m.values)
        w = csv.DictWriter(fh, fieldnames=["cache", *COLUMNS], lineterminator="\n")
        w.writeheader()
        for name, sem in variants.items():
            res = sem_kmeans(path, args.n, args.d, args.k, InitSpec("plusplus", 0), cfg,
                             args.prune, sem=sem)
            w.writerows(metrics_rows(res.metrics, {"cache": name}))
            read = sum(r.bytes_read for r in res.metrics)
            hits = np.mean([r.hit_rate for r in res.metrics[-10:]])
            print(f"{name:>4}: {read / 1e6:9.2f} MB read, mean hit rate (last 10) {hits:.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
