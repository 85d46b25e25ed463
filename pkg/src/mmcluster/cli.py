"""Command-line driver: ``gen``, ``run`` and ``compare``.

Datasets are directories holding ``data.bin`` (row-major little-endian
float64), ``labels.bin`` (int32) and ``manifest.json``. Runs write
``centroids.bin``, ``assign.bin`` (int32), ``keys.bin`` (uint64, hierarchical
algorithms only), ``metrics.csv`` and ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import (InitSpec, fcmeans, kmeans, kmeanspp_multirun, kmedoids_clara,
                         mbkmeans, skmeans)
from .core import MixtureSpec, UsageError, generate_mixture, load_matrix, save_matrix
from .engine import EngineConfig
from .extmem import SemConfig, open_source
from .hier import HierParams, run_hierarchical
from .metrics import COLUMNS, write_metrics_csv

ALGORITHMS = ("kmeans", "skmeans", "kmeanspp", "mbkmeans", "fcmeans", "kmedoids",
              "hmeans", "xmeans", "gmeans")
HIER = ("hmeans", "xmeans", "gmeans")
FLAT = ("kmeans", "skmeans", "kmeanspp")
AXES = {"prune": ("none", "mti", "ti"), "scheduler": ("steal", "static", "fifo"),
        "cache": ("off", "lazy", "lru"), "threads": ("1", "2", "4")}


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def default_threads() -> int:
    raw = os.environ.get("MMCLUSTER_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MMCLUSTER_THREADS must be an integer, got {raw!r}")


# -- datasets -------------------------------------------------------------------

def resolve_dataset(data, n=None, d=None) -> tuple[Path, int, int]:
    """Locate the matrix file and its shape from a dataset dir or a .bin path."""
    path = Path(data)
    manifest = None
    if path.is_dir():
        manifest = path / "manifest.json"
        path = path / "data.bin"
    elif path.with_suffix(".json").exists():
        manifest = path.with_suffix(".json")
    if manifest is not None and manifest.exists() and (n is None or d is None):
        spec = json.loads(manifest.read_text())["dataset"]
        n = spec["n"] if n is None else n
        d = spec["d"] if d is None else d
    if n is None or d is None:
        raise UsageError("dataset shape unknown: pass --n and --d or use a generated dataset")
    if not path.exists():
        raise FileNotFoundError(path)
    return path, int(n), int(d)


def cmd_gen(args) -> int:
    if args.n is None or args.d is None or args.k is None:
        raise UsageError("gen needs --n, --d and --k")
    spec = MixtureSpec(args.n, args.d, args.k, args.sep, args.seed)
    m, labels = generate_mixture(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(out / "data.bin", m.values)
    labels.astype("<i4").tofile(out / "labels.bin")
    manifest = {"version": __version__, "command": "gen", "spec": asdict(spec),
                "dataset": {"n": spec.n, "d": spec.d, "checksum": file_sha256(out / "data.bin")}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {spec.n}x{spec.d} mixture to {out} (sha256 {manifest['dataset']['checksum'][:16]})")
    return 0


# -- runs -----------------------------------------------------------------------

@dataclass
class RunConfig:
    """Every knob of a run; serialized verbatim into the run manifest."""

    data: str
    alg: str = "kmeans"
    k: int = 8
    n: int | None = None
    d: int | None = None
    init: str = "forgy"
    prune: str = "mti"
    sched: str | None = None
    threads: int = 1
    partitions: int | None = None
    task_size: int = 8192
    max_iters: int = 100
    tol: float | None = None
    mode: str = "im"
    rc_bytes: int = 0
    rc_mode: str = "lazy"
    icache: int = 5
    page_bytes: int = 4096
    z: float = 2.0
    batch_frac: float = 0.2
    sample_pct: float = 10.0
    runs: int = 1
    kmax: int = 32
    lmax: int = 8
    alpha: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.alg not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.alg!r}; choose one of: {', '.join(ALGORITHMS)}")
        if self.mode not in ("im", "sem"):
            raise UsageError("mode must be im or sem")
        if self.k < 1 and self.alg not in HIER:
            raise UsageError("k must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in names})

    def engine(self) -> EngineConfig:
        sched = self.sched or ("static" if self.alg == "fcmeans" else "steal")
        if self.alg == "fcmeans":
            conv, tol = "drift", 1e-9 if self.tol is None else self.tol
        else:
            conv, tol = "fraction", 0.0 if self.tol is None else self.tol
        return EngineConfig(threads=self.threads, partitions=self.partitions,
                            task_size=self.task_size, max_iters=self.max_iters, tol=tol,
                            convergence=conv, scheduler=sched, seed=self.seed)

    def sem(self) -> SemConfig:
        return SemConfig(self.page_bytes, self.rc_bytes, self.rc_mode, self.icache)


def execute(cfg: RunConfig):
    """Run one configuration; returns (result, n, d, dataset path)."""
    path, n, d = resolve_dataset(cfg.data, cfg.n, cfg.d)
    ecfg = cfg.engine()
    if cfg.mode == "sem":
        data = open_source(path, n, d, ecfg, cfg.sem())
    else:
        data = load_matrix(path, n, d, ecfg.n_partitions)
    try:
        init = InitSpec(cfg.init, cfg.seed)
        alg = cfg.alg
        if alg == "kmeans":
            res = kmeans(data, cfg.k, init, ecfg, cfg.prune)
        elif alg == "skmeans":
            res = skmeans(data, cfg.k, init, ecfg, cfg.prune)
        elif alg == "kmeanspp":
            res = kmeanspp_multirun(data, cfg.k, cfg.runs, ecfg, cfg.prune, cfg.seed)
        elif alg == "mbkmeans":
            res = mbkmeans(data, cfg.k, cfg.batch_frac, init, ecfg)
        elif alg == "fcmeans":
            res = fcmeans(data, cfg.k, cfg.z, init, ecfg)
        elif alg == "kmedoids":
            res = kmedoids_clara(data, cfg.k, cfg.sample_pct, cfg.max_iters, ecfg)
        else:
            params = HierParams(kmax=cfg.kmax, l_max=cfg.lmax, alpha=cfg.alpha)
            res = run_hierarchical(alg, data, params, ecfg)
    finally:
        if cfg.mode == "sem":
            data.store.close()
    return res, n, d, path


def result_arrays(res) -> dict:
    if hasattr(res, "keys") and hasattr(res, "tree"):
        return {"centroids": res.centroids, "assign": res.assign, "keys": res.keys}
    return {"centroids": res.centroids.current, "assign": res.assign}


def sanity_check(cfg: RunConfig, res, n: int) -> list[str]:
    problems = []
    for rec in res.metrics:
        try:
            rec.check()
        except AssertionError as exc:
            problems.append(str(exc))
        if cfg.alg in FLAT and rec.dist_comps > n * cfg.k:
            problems.append(f"iteration {rec.iter}: {rec.dist_comps} distances exceed n*k")
    return problems


def write_run(cfg: RunConfig, res, n: int, d: int, path: Path, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    arrays = result_arrays(res)
    save_matrix(out / "centroids.bin", arrays["centroids"])
    np.asarray(arrays["assign"], dtype="<i4").tofile(out / "assign.bin")
    if "keys" in arrays:
        np.asarray(arrays["keys"], dtype="<u8").tofile(out / "keys.bin")
    write_metrics_csv(out / "metrics.csv", res.metrics)
    outputs = {name: file_sha256(out / name)
               for name in ("centroids.bin", "assign.bin", "keys.bin") if (out / name).exists()}
    manifest = {"version": __version__, "command": "run", "config": asdict(cfg),
                "dataset": {"path": str(path), "n": n, "d": d, "checksum": file_sha256(path)},
                "centroid_shape": list(np.shape(arrays["centroids"])),
                "iterations": res.iterations, "outputs": outputs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def config_from_args(args) -> RunConfig:
    if args.manifest:
        raw = json.loads(Path(args.manifest).read_text())
        return RunConfig.from_dict(raw["config"])
    if not args.data:
        raise UsageError("run needs --data or --manifest")
    raw = {f.name: getattr(args, f.name) for f in fields(RunConfig)
           if getattr(args, f.name, None) is not None}
    if raw.get("threads") is None:
        raw["threads"] = default_threads()
    return RunConfig(**raw)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    res, n, d, path = execute(cfg)
    manifest = write_run(cfg, res, n, d, path, args.out)
    problems = sanity_check(cfg, res, n)
    last = res.metrics[-1] if res.metrics else None
    print(f"{cfg.alg}: {res.iterations} iterations, objective "
          f"{last.objective if last else math.nan:.6g}, outputs in {args.out}")
    for name, digest in manifest["outputs"].items():
        print(f"  {name} sha256 {digest[:16]}")
    for p in problems:
        print(f"CHECK FAILED: {p}", file=sys.stderr)
    return 1 if problems else 0


# -- comparisons ----------------------------------------------------------------

def variant_config(base: RunConfig, axis: str, value: str) -> RunConfig:
    """Copy of ``base`` differing only along ``axis``."""
    raw = asdict(base)
    if axis == "prune":
        raw["prune"] = value
    elif axis == "scheduler":
        raw["sched"] = value
    elif axis == "threads":
        raw["threads"] = int(value)
    elif axis == "cache":
        raw["mode"] = "sem"
        if value == "off":
            raw["rc_bytes"] = 0
        else:
            raw["rc_mode"] = value
            if not raw["rc_bytes"]:
                _, n, d = resolve_dataset(base.data, base.n, base.d)
                raw["rc_bytes"] = n * d * 8
    else:
        raise UsageError(f"unknown axis {axis!r}; choose one of {sorted(AXES)}")
    return RunConfig(**raw)


def summarize(res) -> dict:
    ms = res.metrics
    return {
        "iter": len(ms),
        "wall_ms": math.fsum(r.wall_ms for r in ms),
        "objective": ms[-1].objective if ms else math.nan,
        "aux_bytes": max((r.aux_bytes for r in ms), default=0),
        **{c: sum(getattr(r, c) for r in ms)
           for c in COLUMNS if c not in ("iter", "wall_ms", "objective", "aux_bytes")},
    }


def compare(base: RunConfig, axis: str, values, out=None):
    """Run every variant; returns (rows, summaries, checks)."""
    results = {}
    for value in values:
        cfg = variant_config(base, axis, value)
        res, n, d, _ = execute(cfg)
        results[value] = (cfg, res, n)
    checks = {}
    ref = None
    agree = True
    for value, (cfg, res, n) in results.items():
        a = np.asarray(result_arrays(res)["assign"])
        ref = a if ref is None else ref
        agree &= bool(np.array_equal(a, ref))
        problems = sanity_check(cfg, res, n)
        checks[f"counters[{value}]"] = not problems
    checks["lossless" if axis == "prune" else "assignments_agree"] = agree
    summaries = {value: summarize(res) for value, (_, res, _) in results.items()}
    if out is not None:
        write_compare_csv(out, results, summaries)
    return results, summaries, checks


def write_compare_csv(out, results, summaries) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = ["kind", "variant"] + list(COLUMNS)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for value, (_, res, _) in results.items():
            for rec in res.metrics:
                w.writerow({"kind": "iter", "variant": value, **asdict(rec)})
        for value, summary in summaries.items():
            w.writerow({"kind": "summary", "variant": value, **summary})


def cmd_compare(args) -> int:
    base = config_from_args(args)
    values = args.values.split(",") if args.values else AXES[args.axis]
    out = Path(args.out)
    csv_path = out if out.suffix == ".csv" else out / "compare.csv"
    _, summaries, checks = compare(base, args.axis, values, csv_path)
    print(f"{'variant':>10} {'iters':>6} {'dist_comps':>12} {'peak_aux':>12} "
          f"{'bytes_read':>12} {'wall_ms':>10}")
    for value, s in summaries.items():
        print(f"{value:>10} {s['iter']:>6} {s['dist_comps']:>12} {s['aux_bytes']:>12} "
              f"{s['bytes_read']:>12} {s['wall_ms']:>10.1f}")
    for name, ok in checks.items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    print(f"wrote {csv_path}")
    return 0 if all(checks.values()) else 1


# -- argument parsing -------------------------------------------------------------

def _add_run_flags(p) -> None:
    p.add_argument("--data", help="dataset directory or matrix file")
    p.add_argument("--manifest", help="rerun the configuration stored in a run manifest")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--alg", choices=ALGORITHMS, metavar="{" + ",".join(ALGORITHMS) + "}")
    p.add_argument("--init", choices=("random", "forgy", "plusplus"))
    p.add_argument("--prune", choices=("none", "mti", "ti"))
    p.add_argument("--sched", choices=("steal", "static", "fifo"))
    p.add_argument("--threads", type=int)
    p.add_argument("--partitions", type=int)
    p.add_argument("--task-size", dest="task_size", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--mode", choices=("im", "sem"))
    p.add_argument("--rc-bytes", dest="rc_bytes", type=int)
    p.add_argument("--rc-mode", dest="rc_mode", choices=("lazy", "lru"))
    p.add_argument("--icache", type=int)
    p.add_argument("--page-bytes", dest="page_bytes", type=int)
    p.add_argument("--z", type=float)
    p.add_argument("--batch-frac", dest="batch_frac", type=float)
    p.add_argument("--sample-pct", dest="sample_pct", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--lmax", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmcluster", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a Gaussian mixture dataset")
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--sep", type=float, default=20.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one clustering algorithm")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run paired variants along one axis")
    c.add_argument("--axis", choices=sorted(AXES), required=True)
    c.add_argument("--values", help="comma-separated variants (default depends on axis)")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        parser.error(str(exc))
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
