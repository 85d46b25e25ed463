"""Semi-external-memory mode: rows stay on disk, algorithm state stays in RAM.

Reads go through a :class:`RowStore` that accounts for the page granularity
of the device, optionally fronted by a partitioned :class:`RowCache`.
"""
from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import numpy as np

from .core import FLOAT, FormatError, UsageError, even_partitions
from .engine import EngineConfig, ThreadLocalState

CACHE_MODES = ("lazy", "lru")


class RowStore:
    """Read-only row-major float64 matrix file with request/read accounting."""

    def __init__(self, path, n: int, d: int, page_bytes: int = 4096):
        if n < 1 or d < 1:
            raise UsageError("n and d must be >= 1")
        if page_bytes < 1:
            raise UsageError("page size must be >= 1 byte")
        self.path = os.fspath(path)
        size = os.stat(self.path).st_size
        if size != n * d * 8:
            raise FormatError(f"{self.path}: expected {n * d * 8} bytes, found {size}")
        self.n, self.d = n, d
        self.page_bytes = page_bytes
        self.row_bytes = d * 8
        self._fd = os.open(self.path, os.O_RDONLY)
        self._lock = threading.Lock()
        self.totals = ThreadLocalState(-2)
        # Read-only map used for seeding and instrumentation; iteration reads use pread.
        self.values = np.memmap(self.path, dtype=FLOAT, mode="r", shape=(n, d))
        self.max_abs = _scan_max_abs(self.values)

    @property
    def rows_requested(self) -> int:
        return self.totals.rows_req

    @property
    def bytes_requested(self) -> int:
        return self.totals.bytes_req

    @property
    def pages_read(self) -> int:
        return self.totals.pages_read

    @property
    def bytes_read(self) -> int:
        return self.totals.bytes_read

    def add_totals(self, states) -> None:
        with self._lock:
            for s in states:
                for name in ("rows_req", "bytes_req", "bytes_read", "pages_read",
                             "cache_hits", "cache_misses"):
                    setattr(self.totals, name, getattr(self.totals, name) + getattr(s, name))

    def pages_of(self, ids: np.ndarray) -> np.ndarray:
        first = ids * self.row_bytes // self.page_bytes
        last = ((ids + 1) * self.row_bytes - 1) // self.page_bytes
        span = last - first + 1
        if (span == 1).all():
            return np.unique(first)
        reps = np.repeat(first, span)
        offs = np.arange(reps.size) - np.repeat(np.cumsum(span) - span, span)
        return np.unique(reps + offs)

    def read(self, ids: np.ndarray, counters) -> np.ndarray:
        """Fetch rows by id, reading every touched page exactly once."""
        if ids.size == 0:
            return np.empty((0, self.d))
        pages = self.pages_of(ids)
        counters.pages_read += pages.size
        counters.bytes_read += pages.size * self.page_bytes
        # Coalesce consecutive pages into single reads.
        breaks = np.flatnonzero(np.diff(pages) != 1) + 1
        run_first = pages[np.r_[0, breaks]]
        run_last = pages[np.r_[breaks - 1, pages.size - 1]]
        file_size = self.n * self.row_bytes
        chunks = []
        run_buf_start = np.empty(run_first.size, dtype=np.int64)
        pos = 0
        for r, (p0, p1) in enumerate(zip(run_first, run_last)):
            off = int(p0) * self.page_bytes
            length = min(int(p1 + 1) * self.page_bytes, file_size) - off
            data = os.pread(self._fd, length, off)
            if len(data) != length:
                raise OSError(f"short read from {self.path}: wanted {length}, got {len(data)}")
            chunks.append(data)
            run_buf_start[r] = pos
            pos += length
        buf = np.frombuffer(b"".join(chunks), dtype=np.uint8)
        row_off = ids * self.row_bytes
        run = np.searchsorted(run_first * self.page_bytes, row_off, side="right") - 1
        first = row_off - run_first[run] * self.page_bytes + run_buf_start[run]
        raw = buf[first[:, None] + np.arange(self.row_bytes)]
        return raw.view(FLOAT).reshape(ids.size, self.d).astype(np.float64)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _scan_max_abs(values, chunk: int = 1 << 16) -> float:
    out = 0.0
    for s in range(0, values.shape[0], chunk):
        out = max(out, float(np.abs(values[s:s + chunk]).max()))
    return out


class RowCache:
    """Row-granular cache split into partitions with an even byte budget each.

    ``lazy`` mode only changes at refresh iterations (flush, then repopulate
    from the rows that were active); ``lru`` inserts every miss and evicts the
    least recently used row of the same partition.
    """

    def __init__(self, n: int, d: int, partition_map, capacity_bytes: int,
                 mode: str = "lazy", icache: int = 5):
        if mode not in CACHE_MODES:
            raise UsageError(f"cache mode must be one of {CACHE_MODES}")
        if capacity_bytes < 0:
            raise UsageError("cache capacity must be >= 0")
        if icache < 1:
            raise UsageError("cache refresh interval must be >= 1")
        self.n, self.d = n, d
        self.mode = mode
        self.icache = icache
        self.capacity_bytes = int(capacity_bytes)
        self.partition_map = list(partition_map)
        P = len(self.partition_map)
        self._starts = np.array([s for s, _, _ in self.partition_map], dtype=np.int64)
        per_part = self.capacity_bytes // P // (d * 8)
        self.part_rows = [min(per_part, c) for _, c, _ in self.partition_map]
        self.slot_of = np.full(n, -1, dtype=np.int64)
        self.buf = [np.empty((r, d)) for r in self.part_rows]
        self.slot_row = [np.full(r, -1, dtype=np.int64) for r in self.part_rows]
        self.stamp = [np.zeros(r, dtype=np.int64) for r in self.part_rows]
        self.used = [0] * P
        self._clock = [0] * P
        self._locks = [threading.Lock() for _ in range(P)]
        self._trace: list = []

    def partition_of(self, ids: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._starts, ids, side="right") - 1

    @property
    def cached_bytes(self) -> int:
        return sum(self.used) * self.d * 8

    def keys(self) -> np.ndarray:
        return np.flatnonzero(self.slot_of >= 0)

    def lookup(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        slots = self.slot_of[ids]
        hit = slots >= 0
        out = np.empty((ids.size, self.d))
        if hit.any():
            parts = self.partition_of(ids[hit])
            hs = slots[hit]
            hit_idx = np.flatnonzero(hit)
            for p in np.unique(parts):
                sel = parts == p
                out[hit_idx[sel]] = self.buf[p][hs[sel]]
                if self.mode == "lru":
                    self._touch(p, hs[sel])
        return hit, out

    def _touch(self, p, slots) -> None:
        with self._locks[p]:
            self._clock[p] += 1
            self.stamp[p][slots] = self._clock[p]

    def insert(self, ids: np.ndarray, rows: np.ndarray) -> None:
        parts = self.partition_of(ids)
        for p in np.unique(parts):
            sel = parts == p
            self._insert_part(int(p), ids[sel], rows[sel])

    def _insert_part(self, p: int, ids, rows) -> None:
        cap = self.part_rows[p]
        if cap == 0:
            return
        with self._locks[p]:
            fresh = self.slot_of[ids] < 0
            ids, rows = ids[fresh], rows[fresh]
            if ids.size > cap:
                ids, rows = ids[-cap:], rows[-cap:]
            if ids.size == 0:
                return
            free = cap - self.used[p]
            if ids.size <= free:
                slots = np.arange(self.used[p], self.used[p] + ids.size)
                self.used[p] += ids.size
            else:
                take = np.arange(self.used[p], cap)
                need = ids.size - take.size
                occupied = np.arange(self.used[p])
                victims = occupied[np.argsort(self.stamp[p][occupied], kind="stable")[:need]]
                self.slot_of[self.slot_row[p][victims]] = -1
                slots = np.concatenate([take, victims])
                self.used[p] = cap
            self._clock[p] += 1
            self.buf[p][slots] = rows
            self.slot_row[p][slots] = ids
            self.stamp[p][slots] = self._clock[p]
            self.slot_of[ids] = slots

    def flush(self) -> None:
        for p in range(len(self.part_rows)):
            used = self.slot_row[p][:self.used[p]]
            self.slot_of[used] = -1
            self.slot_row[p].fill(-1)
            self.used[p] = 0

    def record(self, ids, rows) -> None:
        self._trace.append((ids.copy(), np.array(rows, copy=True)))

    def take_trace(self) -> tuple[np.ndarray, np.ndarray]:
        trace, self._trace = self._trace, []
        if not trace:
            return np.empty(0, dtype=np.int64), np.empty((0, self.d))
        return np.concatenate([t[0] for t in trace]), np.concatenate([t[1] for t in trace])

    def nbytes(self) -> int:
        return (self.slot_of.nbytes + sum(b.nbytes for b in self.buf)
                + sum(s.nbytes for s in self.slot_row) + sum(s.nbytes for s in self.stamp))


def refresh_due(t: int, icache: int) -> bool:
    """Lazy refreshes happen at t = (2**j - 1) * icache: I, 3I, 7I, 15I, ..."""
    if t < 1 or t % icache:
        return False
    m = t // icache + 1
    return m & (m - 1) == 0


def refresh_schedule(icache: int, upto: int) -> list[int]:
    return [t for t in range(1, upto + 1) if refresh_due(t, icache)]


def refresh_cache(cache: RowCache, trace) -> RowCache:
    """Flush, then insert the traced active rows, lowest ids first per partition."""
    ids, rows = trace
    cache.flush()
    if len(ids) == 0:
        return cache
    ids = np.asarray(ids, dtype=np.int64)
    ids, first = np.unique(ids, return_index=True)
    rows = np.asarray(rows)[first]
    parts = cache.partition_of(ids)
    for p in np.unique(parts):
        sel = np.flatnonzero(parts == p)[:cache.part_rows[p]]
        cache._insert_part(int(p), ids[sel], rows[sel])
    return cache


def request_rows(ids, store: RowStore, cache: RowCache | None = None, iteration: int = 0,
                 counters=None) -> np.ndarray:
    """Serve row data for sorted ``ids`` from the cache or the store.

    Counts land in ``counters`` (a per-thread state) when given, otherwise in
    the store's own running totals.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids[0] < 0 or ids[-1] >= store.n or ids.min() < 0 or ids.max() >= store.n):
        raise UsageError(f"row id out of range [0, {store.n})")
    own = counters is None
    ctr = ThreadLocalState(-3) if own else counters
    ctr.rows_req += ids.size
    ctr.bytes_req += ids.size * store.row_bytes
    if cache is None:
        rows = store.read(ids, ctr)
    else:
        hit, rows = cache.lookup(ids)
        miss = ~hit
        n_hit = int(hit.sum())
        ctr.cache_hits += n_hit
        ctr.cache_misses += ids.size - n_hit
        if miss.any():
            rows[miss] = store.read(ids[miss], ctr)
            if cache.mode == "lru":
                cache.insert(ids[miss], rows[miss])
        if cache.mode == "lazy" and refresh_due(iteration, cache.icache):
            cache.record(ids, rows)
    if own:
        store.add_totals([ctr])
    return rows


class ExternalSource:
    """Engine row source backed by a :class:`RowStore` and optional cache."""

    backend = "sem"

    def __init__(self, store: RowStore, cache: RowCache | None = None, transform=None):
        self.store = store
        self.cache = cache
        self.n, self.d = store.n, store.d
        self.transform = transform
        self.max_abs = store.max_abs
        self.values = store.values
        self.partition_map = cache.partition_map if cache is not None else None

    def fetch(self, ids, local, partition: int = 0, iteration: int = 0) -> np.ndarray:
        rows = request_rows(ids, self.store, self.cache, iteration, local)
        return self.transform(rows) if self.transform is not None else rows

    def fetch_range(self, start, count, local, partition: int = 0, iteration: int = 0):
        return self.fetch(np.arange(start, start + count), local, partition, iteration)

    def peek(self, ids):
        rows = np.asarray(self.values[np.asarray(ids)])
        return self.transform(rows) if self.transform is not None else rows

    def begin_iteration(self, t: int) -> None:
        pass

    def end_iteration(self, t: int, states) -> None:
        self.store.add_totals(states)
        if self.cache is not None and self.cache.mode == "lazy" and refresh_due(t, self.cache.icache):
            refresh_cache(self.cache, self.cache.take_trace())

    def aux_bytes(self) -> int:
        return self.cache.nbytes() if self.cache is not None else 0


@dataclass
class SemConfig:
    page_bytes: int = 4096
    cache_bytes: int = 0
    cache_mode: str = "lazy"
    icache: int = 5


def open_source(path, n: int, d: int, cfg: EngineConfig, sem: SemConfig | None = None):
    sem = sem or SemConfig()
    store = RowStore(path, n, d, sem.page_bytes)
    cache = None
    pmap = even_partitions(n, min(cfg.n_partitions, n))
    if sem.cache_bytes > 0:
        cache = RowCache(n, d, pmap, sem.cache_bytes, sem.cache_mode, sem.icache)
    src = ExternalSource(store, cache)
    src.partition_map = pmap
    return src


def sem_kmeans(path, n: int, d: int, k: int, init=None, cfg: EngineConfig | None = None,
               prune: str = "mti", sem: SemConfig | None = None, on_iteration=None):
    """k-means with the matrix on disk; numerics identical to the in-memory run."""
    from .algorithms import kmeans

    cfg = cfg or EngineConfig()
    src = open_source(path, n, d, cfg, sem)
    try:
        res = kmeans(src, k, init, cfg, prune, on_iteration=on_iteration)
        res.extra["store"] = {"rows_requested": src.store.rows_requested,
                              "bytes_requested": src.store.bytes_requested,
                              "pages_read": src.store.pages_read,
                              "bytes_read": src.store.bytes_read}
        return res
    finally:
        src.store.close()
