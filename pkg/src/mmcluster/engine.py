"""Parallel MM execution kernel.

A run is a sequence of iterations. Each iteration has one parallel phase per
barrier the algorithm needs (merged MM algorithms need one). In a phase, T
workers drain a partitioned task queue; every worker owns a
:class:`ThreadLocalState` that nobody else touches. After the barrier the
coordinator reduces the per-thread states in ascending thread order.
"""
from __future__ import annotations

import math
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import CentroidSet, DataMatrix, UsageError, even_partitions
from .metrics import IterationMetrics

SCHEDULERS = {"steal": "steal", "partitioned_stealing": "steal", "static": "static",
              "fifo": "fifo"}
CONVERGENCE_MODES = ("fraction", "drift", "iterations")


@dataclass(frozen=True)
class Task:
    start: int
    count: int
    partition: int

    @property
    def stop(self) -> int:
        return self.start + self.count


@dataclass
class EngineConfig:
    threads: int = 1
    partitions: int | None = None
    task_size: int = 8192
    max_iters: int = 100
    tol: float = 0.0
    convergence: str = "fraction"
    scheduler: str = "steal"
    locality_groups: int = 1
    seed: int = 0
    record_tasks: bool = False

    def __post_init__(self):
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if self.partitions is not None and self.partitions < 1:
            raise UsageError("partitions must be >= 1")
        if self.task_size < 1:
            raise UsageError("task_size must be >= 1")
        if self.tol < 0:
            raise UsageError("tol must be >= 0")
        if self.max_iters < 0:
            raise UsageError("max_iters must be >= 0")
        if self.scheduler not in SCHEDULERS:
            raise UsageError(f"unknown scheduler {self.scheduler!r}")
        if self.convergence not in CONVERGENCE_MODES:
            raise UsageError(f"unknown convergence mode {self.convergence!r}")
        self.scheduler = SCHEDULERS[self.scheduler]

    @property
    def n_partitions(self) -> int:
        return self.partitions or self.threads


def make_tasks(partition_map, task_size: int) -> list[Task]:
    tasks = []
    for start, count, pid in partition_map:
        for s in range(start, start + count, task_size):
            tasks.append(Task(s, min(task_size, start + count - s), pid))
    return tasks


class TaskQueue:
    """Per-partition FIFO queues, one lock each.

    Worker ``w`` lives on partition ``w % P``. When its home queue is empty it
    scans the partitions of its locality group, then every other partition,
    each exactly once, before reporting exhaustion.
    """

    def __init__(self, n_partitions: int, threads: int, groups: int = 1,
                 mode: str = "steal"):
        self.P = n_partitions
        self.T = threads
        self.mode = SCHEDULERS[mode]
        self.groups = max(1, min(groups, n_partitions))
        self._queues = [deque() for _ in range(self.P)]
        self._locks = [threading.Lock() for _ in range(self.P)]
        self._fifo: deque = deque()
        self._fifo_lock = threading.Lock()
        self.steals = 0
        self._steal_lock = threading.Lock()
        self._order = [self._steal_order(w) for w in range(threads)]

    def group_of(self, pid: int) -> int:
        return pid * self.groups // self.P

    def home(self, worker: int) -> int:
        return worker % self.P

    def _steal_order(self, worker: int) -> list[int]:
        if self.mode == "static":
            return [p for p in range(self.P) if p % self.T == worker]
        home = self.home(worker)
        ring = [(home + i) % self.P for i in range(self.P)]
        same = [p for p in ring if self.group_of(p) == self.group_of(home)]
        other = [p for p in ring if self.group_of(p) != self.group_of(home)]
        return same + other

    def fill(self, tasks) -> None:
        self.steals = 0
        if self.mode == "fifo":
            self._fifo.extend(tasks)
            return
        for t in tasks:
            self._queues[t.partition % self.P].append(t)

    def pending(self) -> int:
        return len(self._fifo) + sum(len(q) for q in self._queues)

    def next_task(self, worker: int) -> Task | None:
        if self.mode == "fifo":
            with self._fifo_lock:
                return self._fifo.popleft() if self._fifo else None
        home = self.home(worker)
        for pid in self._order[worker]:
            q = self._queues[pid]
            if not q:
                continue
            with self._locks[pid]:
                if not q:
                    continue
                task = q.popleft()
            if pid != home and self.mode == "steal":
                with self._steal_lock:
                    self.steals += 1
            return task
        return None


def next_task(worker: int, q: TaskQueue) -> Task | None:
    return q.next_task(worker)


@dataclass
class ThreadLocalState:
    tid: int
    sums: np.ndarray | None = None
    counts: np.ndarray | None = None
    dist_comps: int = 0
    prune_c1: int = 0
    prune_c2: int = 0
    prune_c3: int = 0
    reassigned: int = 0
    rows_req: int = 0
    bytes_req: int = 0
    bytes_read: int = 0
    pages_read: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    objective_parts: list = field(default_factory=list)
    scratch: dict = field(default_factory=dict)

    COUNTERS = ("dist_comps", "prune_c1", "prune_c2", "prune_c3", "reassigned", "rows_req",
                "bytes_req", "bytes_read", "pages_read", "cache_hits", "cache_misses")

    def alloc(self, k: int, d: int) -> None:
        if self.sums is None or self.sums.shape != (k, d):
            self.sums = np.zeros((k, d))
            self.counts = np.zeros(k, dtype=np.int32)
        else:
            self.sums.fill(0.0)
            self.counts.fill(0)

    def reset_counters(self) -> None:
        for name in self.COUNTERS:
            setattr(self, name, 0)
        self.objective_parts = []

    def nbytes(self) -> int:
        total = 0
        if self.sums is not None:
            total += self.sums.nbytes + self.counts.nbytes
        return total


# -- reproducible accumulation ----------------------------------------------
#
# Per-task partial sums are rounded onto a fixed power-of-two grid before they
# are added into a per-thread accumulator. With the grid chosen so that every
# reachable magnitude stays below 2**52 grid steps, all later additions are
# exact, so the totals do not depend on which thread ran which task or in
# which order the partials arrived.

def sum_quantum(bound: float) -> float:
    """Grid step making sums of magnitude <= ``bound`` exact in float64."""
    bound = max(float(bound), np.finfo(np.float64).tiny * 2**60)
    return math.ldexp(1.0, math.frexp(bound)[1] - 51)


def quantize(x: np.ndarray, q: float) -> np.ndarray:
    return np.rint(x / q) * q


def reduce(states, k: int | None = None, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Merge per-thread ``sums``/``counts`` in ascending thread index."""
    ordered = sorted(states, key=lambda s: s.tid)
    live = [s for s in ordered if s.sums is not None]
    if not live:
        return np.zeros((k or 0, d or 0)), np.zeros(k or 0, dtype=np.int64)
    sums = np.zeros_like(live[0].sums)
    counts = np.zeros(live[0].counts.shape, dtype=np.int64)
    for s in live:
        sums += s.sums
        counts += s.counts
    return sums, counts


def finalize_centroids(sums: np.ndarray, counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Cluster means; clusters with no members keep ``fallback``."""
    out = np.array(fallback, dtype=np.float64, copy=True)
    live = counts > 0
    out[live] = sums[live] / counts[live, None]
    return out


def check_convergence(C: CentroidSet | None, reassigned: int, n: int, tol: float,
                      mode: str = "fraction") -> bool:
    if mode == "fraction":
        return reassigned <= tol * n
    if mode == "drift":
        return C is not None and float(np.max(C.drift, initial=0.0)) <= tol
    if mode == "iterations":
        return False
    raise UsageError(f"unknown convergence mode {mode!r}")


# -- row sources ------------------------------------------------------------

class InMemorySource:
    """Serves rows from a resident matrix; counts what was requested."""

    backend = "im"

    def __init__(self, values: np.ndarray, transform=None):
        self.values = values
        self.n, self.d = values.shape
        self.transform = transform
        self._row_bytes = self.d * 8
        self.max_abs = 1.0 if transform is not None else float(np.abs(values).max(initial=0.0))

    def peek(self, ids) -> np.ndarray:
        """Row access for instrumentation only; not counted as a request."""
        rows = self.values[np.asarray(ids, dtype=np.int64)]
        return self.transform(rows) if self.transform is not None else rows

    def fetch(self, ids, local: ThreadLocalState, partition: int = 0,
              iteration: int = 0) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        local.rows_req += ids.size
        local.bytes_req += ids.size * self._row_bytes
        rows = self.values[ids]
        return self.transform(rows) if self.transform is not None else rows

    def fetch_range(self, start: int, count: int, local: ThreadLocalState,
                    partition: int = 0, iteration: int = 0) -> np.ndarray:
        local.rows_req += count
        local.bytes_req += count * self._row_bytes
        rows = self.values[start:start + count]
        return self.transform(rows) if self.transform is not None else rows

    def begin_iteration(self, t: int) -> None:
        pass

    def end_iteration(self, t: int, states) -> None:
        pass

    def aux_bytes(self) -> int:
        return 0


def as_source(data):
    if isinstance(data, DataMatrix):
        return InMemorySource(data.values)
    if isinstance(data, np.ndarray):
        return InMemorySource(np.ascontiguousarray(data, dtype=np.float64))
    return data


# -- algorithm contract -----------------------------------------------------

@dataclass
class IterationOutcome:
    reassigned: int = 0
    objective: float = float("nan")
    converged: bool = False


class MMAlgorithm:
    """Algorithm hooks driven by :func:`run_mm`.

    ``phases`` is the number of barriers per iteration: 1 for merged MM
    steps, 2 when the algorithm keeps separate M1/M2 steps.
    """

    name = "base"
    phases = 1
    preferred_scheduler: str | None = None

    def setup(self, ctx: "RunContext") -> None:
        self.ctx = ctx

    def init_local(self, local: ThreadLocalState) -> None:
        pass

    def begin_iteration(self, t: int) -> None:
        pass

    def tasks(self, phase: int) -> list[Task]:
        return self.ctx.tasks

    def process_task(self, phase: int, task: Task, local: ThreadLocalState) -> None:
        raise NotImplementedError

    def end_phase(self, phase: int, states: list[ThreadLocalState]) -> None:
        pass

    def end_iteration(self, t: int, states: list[ThreadLocalState]) -> IterationOutcome:
        raise NotImplementedError

    def aux_bytes(self) -> int:
        return 0

    def result(self):
        raise NotImplementedError


@dataclass
class RunContext:
    source: object
    n: int
    d: int
    cfg: EngineConfig
    partition_map: list
    tasks: list[Task]
    iteration: int = 0
    coordinator: ThreadLocalState = field(default_factory=lambda: ThreadLocalState(-1))

    def fetch(self, ids, local, task: Task):
        return self.source.fetch(ids, local, task.partition, self.iteration)

    def fetch_task(self, task: Task, local):
        return self.source.fetch_range(task.start, task.count, local, task.partition,
                                       self.iteration)


@dataclass
class RunTrace:
    metrics: list[IterationMetrics] = field(default_factory=list)
    barriers: list[int] = field(default_factory=list)
    steals: list[int] = field(default_factory=list)
    executed: list[list[tuple[int, Task]]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


class Engine:
    def __init__(self, cfg: EngineConfig | None = None):
        self.cfg = cfg or EngineConfig()

    def run(self, algorithm: MMAlgorithm, data, on_iteration=None):
        cfg = self.cfg
        source = as_source(data)
        n, d = source.n, source.d
        if n < 1:
            raise UsageError("empty data")
        P = min(cfg.n_partitions, n)
        pmap = getattr(data, "partition_map", None)
        if not pmap or len(pmap) != P:
            pmap = even_partitions(n, P)
        ctx = RunContext(source, n, d, cfg, pmap, make_tasks(pmap, cfg.task_size))
        algorithm.setup(ctx)
        sched = cfg.scheduler
        queue = TaskQueue(len(pmap), cfg.threads, cfg.locality_groups, sched)
        states = [ThreadLocalState(tid) for tid in range(cfg.threads)]
        for s in states:
            algorithm.init_local(s)
        trace = RunTrace()

        def worker(tid, phase, log):
            local = states[tid]
            while True:
                task = queue.next_task(tid)
                if task is None:
                    return
                algorithm.process_task(phase, task, local)
                if log is not None:
                    log.append((tid, task))

        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        try:
            for t in range(1, cfg.max_iters + 1):
                t0 = time.perf_counter()
                ctx.iteration = t
                for s in states:
                    s.reset_counters()
                ctx.coordinator.reset_counters()
                source.begin_iteration(t)
                algorithm.begin_iteration(t)
                log = [] if cfg.record_tasks else None
                steals = 0
                barriers = 0
                for phase in range(algorithm.phases):
                    tasks = algorithm.tasks(phase)
                    if not tasks:
                        algorithm.end_phase(phase, states)
                        continue
                    barriers += 1
                    queue.fill(tasks)
                    if pool is None:
                        worker(0, phase, log)
                    else:
                        futures = [pool.submit(worker, tid, phase, log)
                                   for tid in range(cfg.threads)]
                        for f in futures:
                            f.result()
                    steals += queue.steals
                    algorithm.end_phase(phase, states)
                outcome = algorithm.end_iteration(t, states)
                source.end_iteration(t, states + [ctx.coordinator])
                rec = IterationMetrics(
                    iter=t,
                    wall_ms=(time.perf_counter() - t0) * 1e3,
                    objective=float(outcome.objective),
                    reassigned=int(outcome.reassigned),
                    aux_bytes=int(algorithm.aux_bytes() + sum(s.nbytes() for s in states)),
                )
                for name in ("dist_comps", "prune_c1", "prune_c2", "prune_c3", "rows_req",
                             "bytes_req", "bytes_read", "cache_hits", "cache_misses"):
                    setattr(rec, name, sum(getattr(s, name) for s in states)
                            + getattr(ctx.coordinator, name))
                trace.metrics.append(rec)
                trace.barriers.append(barriers)
                trace.steals.append(steals)
                if log is not None:
                    trace.executed.append(log)
                trace.iterations = t
                if on_iteration is not None:
                    on_iteration(rec)
                if outcome.converged:
                    trace.converged = True
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        return algorithm.result(), trace


def run_mm(algorithm: MMAlgorithm, data, cfg: EngineConfig | None = None, on_iteration=None):
    """Run ``algorithm`` to convergence or ``cfg.max_iters``; returns (result, trace)."""
    return Engine(cfg).run(algorithm, data, on_iteration)
