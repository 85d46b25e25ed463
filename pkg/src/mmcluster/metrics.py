from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

CSV_HEADER = ("iter,wall_ms,objective,dist_comps,prune_c1,prune_c2,prune_c3,reassigned,"
              "rows_req,bytes_req,bytes_read,cache_hits,cache_misses,aux_bytes")


@dataclass
class IterationMetrics:
    iter: int
    wall_ms: float = 0.0
    objective: float = float("nan")
    dist_comps: int = 0
    prune_c1: int = 0
    prune_c2: int = 0
    prune_c3: int = 0
    reassigned: int = 0
    rows_req: int = 0
    bytes_req: int = 0
    bytes_read: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    aux_bytes: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.cache_hits + self.cache_misses
        return self.cache_hits / total if total else 0.0

    def check(self) -> None:
        for f in fields(self):
            if f.name in ("wall_ms", "objective"):
                continue
            if getattr(self, f.name) < 0:
                raise AssertionError(f"negative counter {f.name} at iteration {self.iter}")


COLUMNS = tuple(f.name for f in fields(IterationMetrics))
assert ",".join(COLUMNS) == CSV_HEADER


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_rows(records, prefix: dict | None = None):
    for rec in records:
        row = dict(prefix or {})
        row.update({k: _fmt(v) for k, v in asdict(rec).items()})
        yield row


def write_metrics_csv(path_or_buf, records, prefix: dict | None = None) -> None:
    cols = list(prefix or {}) + list(COLUMNS)
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(metrics_rows(records, prefix))
    finally:
        if own:
            fh.close()


def read_metrics_csv(path_or_buf) -> list[IterationMetrics]:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, newline="") as fh:
            text = fh.read()
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for f in fields(IterationMetrics):
            raw = row[f.name]
            kw[f.name] = float(raw) if f.type in ("float", float) else int(raw)
        out.append(IterationMetrics(**kw))
    return out
