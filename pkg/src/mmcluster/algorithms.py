"""Flat MM clustering algorithms driven by the parallel engine."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (UNASSIGNED, CentroidSet, DataMatrix, DomainError, UsageError,
                   all_distances, point_distances, unit_rows)
from .engine import (EngineConfig, InMemorySource, IterationOutcome, MMAlgorithm,
                     ThreadLocalState, check_convergence, finalize_centroids, quantize,
                     reduce, run_mm, sum_quantum)
from .metrics import IterationMetrics
from .pruning import make_prune_state

INIT_METHODS = ("random_assign", "forgy", "plusplus")
_INIT_ALIASES = {"random": "random_assign", "random_assign": "random_assign",
                 "forgy": "forgy", "plusplus": "plusplus", "kmeanspp": "plusplus"}


@dataclass(frozen=True)
class InitSpec:
    method: str = "forgy"
    seed: int = 0

    def __post_init__(self):
        if self.method not in _INIT_ALIASES:
            raise UsageError(f"unknown init method {self.method!r}")
        object.__setattr__(self, "method", _INIT_ALIASES[self.method])


@dataclass
class ClusterResult:
    centroids: CentroidSet
    assign: np.ndarray
    metrics: list[IterationMetrics]
    iterations: int
    converged: bool
    objective: float = float("nan")
    extra: dict = field(default_factory=dict)
    trace: object = None

    @property
    def k(self) -> int:
        return self.centroids.k


def _values(m) -> np.ndarray:
    if isinstance(m, DataMatrix):
        return m.values
    if isinstance(m, np.ndarray):
        return m
    return getattr(m, "values")


def _rng(seed, *stream) -> np.random.Generator:
    """Counter-style generator: (seed, stream...) always yields the same draws."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


# -- initialisation ----------------------------------------------------------

def plusplus_probabilities(d2) -> np.ndarray:
    """Selection probabilities proportional to squared distance to the chosen set."""
    d2 = np.asarray(d2, dtype=np.float64)
    total = d2.sum()
    if total <= 0:
        return np.full(d2.shape, 1.0 / d2.size)
    return d2 / total


def init_centroids(m, k: int, spec: InitSpec | None = None) -> CentroidSet:
    spec = spec or InitSpec()
    values = _values(m)
    n = values.shape[0]
    if k < 1 or k > n:
        raise UsageError(f"k must be in [1, n={n}], got {k}")
    rng = _rng(spec.seed, 0)
    if spec.method == "forgy":
        rows = rng.choice(n, size=k, replace=False)
        return CentroidSet(values[rows].copy())
    if spec.method == "random_assign":
        labels = rng.integers(0, k, size=n)
        cents = np.empty((k, values.shape[1]))
        for c in range(k):
            members = values[labels == c]
            cents[c] = members.mean(axis=0) if len(members) else values[rng.integers(n)]
        return CentroidSet(cents)
    # k-means++ seeding.
    chosen = [int(rng.integers(n))]
    d2 = point_distances(values, values[chosen[0]]) ** 2
    for _ in range(1, k):
        p = plusplus_probabilities(d2)
        if d2.sum() <= 0:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        else:
            nxt = int(rng.choice(n, p=p))
        chosen.append(nxt)
        np.minimum(d2, point_distances(values, values[nxt]) ** 2, out=d2)
    return CentroidSet(values[chosen].copy())


# -- Lloyd / spherical k-means ------------------------------------------------

class LloydKMeans(MMAlgorithm):
    """Merged-step Lloyd's iteration with pluggable lossless pruning.

    Cluster sums are maintained incrementally: a task only contributes the rows
    that changed cluster, so points kept by clause 1 are never read.
    """

    name = "kmeans"

    def __init__(self, k: int, centroids: CentroidSet, prune: str = "mti",
                 spherical: bool = False, track_objective: bool | None = None):
        self.k = k
        self.C = centroids.copy()
        self.prune = prune
        self.spherical = spherical
        self.track_objective = track_objective

    def setup(self, ctx):
        super().setup(ctx)
        if self.k > ctx.n:
            raise UsageError(f"k={self.k} exceeds n={ctx.n}")
        if self.C.current.shape != (self.k, ctx.d):
            raise UsageError("initial centroids do not match (k, d)")
        self.state = make_prune_state(self.prune, ctx.n, self.k)
        self.state.on_new_centroids(self.C, np.zeros(self.k))
        self.sums = np.zeros((self.k, ctx.d))
        self.counts = np.zeros(self.k, dtype=np.int64)
        self.q = sum_quantum(4.0 * ctx.n * max(ctx.source.max_abs, 1e-300))
        if self.track_objective is None:
            self.track_objective = getattr(ctx.source, "backend", "im") == "im"

    def init_local(self, local):
        local.alloc(self.k, self.ctx.d)

    def process_task(self, phase, task, local):
        st = self.state
        st.begin_block(task.start, task.count, None)
        res = st.assign_block(task.start, task.count, self.C,
                              lambda ids: self.ctx.fetch(ids, local, task), local)
        moved = res.old != res.new
        n_moved = int(moved.sum())
        local.reassigned += n_moved
        if n_moved:
            partial = np.zeros((self.k, self.ctx.d))
            rows = res.rows[moved]
            new = res.new[moved]
            old = res.old[moved]
            np.add.at(partial, new, rows)
            was = old != UNASSIGNED
            np.subtract.at(partial, old[was], rows[was])
            local.sums += quantize(partial, self.q)
            local.counts += np.bincount(new, minlength=self.k).astype(np.int32)
            local.counts -= np.bincount(old[was], minlength=self.k).astype(np.int32)
        if self.track_objective:
            sq = res.dist * res.dist
            fetched = np.zeros(task.count, dtype=bool)
            fetched[res.ids - task.start] = True
            rest = np.flatnonzero(~fetched) + task.start
            if rest.size:
                rows = self.ctx.source.peek(rest)
                d = point_distances(rows - self.C.current[st.assign[rest]],
                                    np.zeros(self.ctx.d))
                sq = np.concatenate([sq, d * d])
            local.objective_parts.append((task.start, math.fsum(sq)))

    def end_iteration(self, t, states):
        delta_sums, delta_counts = reduce(states)
        self.sums += delta_sums
        self.counts += delta_counts
        reassigned = sum(s.reassigned for s in states)
        objective = float("nan")
        if self.track_objective:
            parts = sorted(p for s in states for p in s.objective_parts)
            objective = math.fsum(v for _, v in parts)
        for s in states:
            s.alloc(self.k, self.ctx.d)
        new = finalize_centroids(self.sums, self.counts, self.C.current)
        if (self.counts == 0).any():
            new = self._reseed_empty(new)
        if self.spherical:
            new = _unit_centroids(new, self.C.current)
        self.C.advance(new)
        self.C.counts = self.counts.copy()
        self.state.on_new_centroids(self.C, self.C.drift)
        cfg = self.ctx.cfg
        done = check_convergence(self.C, reassigned, self.ctx.n, cfg.tol, cfg.convergence)
        return IterationOutcome(reassigned, objective, done)

    def _reseed_empty(self, new):
        """Move the farthest point of a multi-member cluster into each empty cluster."""
        ctx = self.ctx
        assign = self.state.assign
        far = np.empty(ctx.n)
        for task in ctx.tasks:
            rows = ctx.fetch_task(task, ctx.coordinator)
            sl = slice(task.start, task.stop)
            far[sl] = point_distances(rows - self.C.current[assign[sl]], np.zeros(ctx.d))
        taken = np.zeros(ctx.n, dtype=bool)
        for c in np.flatnonzero(self.counts == 0):
            eligible = (self.counts[assign] > 1) & ~taken
            if not eligible.any():
                break
            i = int(np.argmax(np.where(eligible, far, -np.inf)))
            taken[i] = True
            donor = int(assign[i])
            v = ctx.source.fetch(np.array([i]), ctx.coordinator, 0, ctx.iteration)[0]
            vq = quantize(v, self.q)
            self.sums[donor] -= vq
            self.sums[c] += vq
            self.counts[donor] -= 1
            self.counts[c] += 1
            assign[i] = c
            self.state.invalidate(np.array([i]))
            new[donor] = self.sums[donor] / self.counts[donor]
            new[c] = v
        return new

    def aux_bytes(self):
        return self.state.nbytes()

    def result(self):
        return self.C, self.state.assign.copy()


def _unit_centroids(new, fallback):
    norms = point_distances(new, np.zeros(new.shape[1]))
    out = new.copy()
    ok = norms > 0
    out[ok] = new[ok] / norms[ok, None]
    out[~ok] = fallback[~ok]
    return out


def _pack(result, trace, **extra) -> ClusterResult:
    C, assign = result
    objective = trace.metrics[-1].objective if trace.metrics else float("nan")
    return ClusterResult(C, assign, trace.metrics, trace.iterations, trace.converged,
                         objective, dict(extra), trace)


def kmeans(m, k: int, init: InitSpec | CentroidSet | None = None,
           cfg: EngineConfig | None = None, prune: str = "mti",
           track_objective: bool | None = None, on_iteration=None) -> ClusterResult:
    cfg = cfg or EngineConfig()
    C0 = init if isinstance(init, CentroidSet) else init_centroids(_init_view(m), k, init)
    alg = LloydKMeans(k, C0, prune, track_objective=track_objective)
    res, trace = run_mm(alg, m, cfg, on_iteration)
    return _pack(res, trace, prune=prune)


def _init_view(m):
    """Row data for seeding; external stores expose a read-only memory map."""
    if isinstance(m, (DataMatrix, np.ndarray)):
        return m
    if hasattr(m, "values"):
        return m.values
    raise UsageError("cannot seed centroids from this data source")


def skmeans(m, k: int, init: InitSpec | CentroidSet | None = None,
            cfg: EngineConfig | None = None, prune: str = "mti",
            on_iteration=None) -> ClusterResult:
    """Spherical k-means: Euclidean Lloyd's on the unit sphere with unit centroids."""
    cfg = cfg or EngineConfig()
    if isinstance(m, (DataMatrix, np.ndarray)):
        values = _values(m)
        unit = unit_rows(values)
        source = InMemorySource(unit)
        pmap = getattr(m, "partition_map", None)
        data = DataMatrix(unit, list(pmap) if pmap else [])
    else:
        source = m
        source.transform = unit_rows
        source.max_abs = 1.0
        unit = None
        data = source
    if isinstance(init, CentroidSet):
        C0 = init
    else:
        seed_rows = unit if unit is not None else unit_rows(np.asarray(source.values))
        C0 = init_centroids(seed_rows, k, init)
    C0 = CentroidSet(_unit_centroids(C0.current, C0.current))
    if (point_distances(C0.current, np.zeros(C0.current.shape[1])) == 0).any():
        raise DomainError("initial centroid with zero norm")
    alg = LloydKMeans(k, C0, prune, spherical=True)
    res, trace = run_mm(alg, data if unit is not None else source, cfg, on_iteration)
    return _pack(res, trace, prune=prune)


def kmeanspp_multirun(m, k: int, r: int = 1, cfg: EngineConfig | None = None,
                      prune: str = "mti", seed: int | None = None) -> ClusterResult:
    """Best (minimum SSE) of ``r`` k-means++ seeded runs."""
    if r < 1:
        raise UsageError("run count must be >= 1")
    cfg = cfg or EngineConfig()
    base = cfg.seed if seed is None else seed
    best = None
    runs = []
    for i in range(r):
        res = kmeans(m, k, InitSpec("plusplus", run_seed(base, i)), cfg, prune)
        score = final_sse(m, res)
        runs.append(score)
        if best is None or score < best[0]:
            best = (score, i, res)
    score, idx, res = best
    res.extra.update(run_sse=runs, best_run=idx, best_sse=score)
    return res


def run_seed(seed: int, i: int) -> int:
    return int(seed) if i == 0 else int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0])


def final_sse(m, res: ClusterResult) -> float:
    """SSE of the final assignment against the centroids it was computed from."""
    values = _values(m) if not hasattr(m, "peek") else m.values
    cents = res.centroids.previous
    diff = values - cents[res.assign]
    return math.fsum(np.einsum("ij,ij->i", diff, diff))


# -- mini-batch k-means -------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    frac: float = 0.2

    def __post_init__(self):
        if not (0 < self.frac <= 1):
            raise UsageError("batch fraction must be in (0, 1]")

    def size(self, n: int) -> int:
        return max(1, math.ceil(self.frac * n))


def learning_rate(count: int) -> float:
    """Per-centroid step size: the reciprocal of its cumulative assignment count."""
    return 1.0 / count


def gradient_step(c, v, eta: float) -> np.ndarray:
    return (1.0 - eta) * np.asarray(c, dtype=np.float64) + eta * np.asarray(v, dtype=np.float64)


class MiniBatchKMeans(MMAlgorithm):
    name = "mbkmeans"

    def __init__(self, k: int, centroids: CentroidSet, batch: BatchSpec, seed: int = 0):
        self.k = k
        self.C = centroids.copy()
        self.batch = batch
        self.seed = seed

    def setup(self, ctx):
        super().setup(ctx)
        if self.k > ctx.n:
            raise UsageError(f"k={self.k} exceeds n={ctx.n}")
        self.cum = np.zeros(self.k, dtype=np.int64)
        self.labels = np.full(ctx.n, UNASSIGNED, dtype=np.int32)
        self.in_batch = np.zeros(ctx.n, dtype=bool)
        self.q = sum_quantum(4.0 * ctx.n * max(ctx.source.max_abs, 1e-300))

    def init_local(self, local):
        local.alloc(self.k, self.ctx.d)

    def begin_iteration(self, t):
        b = self.batch.size(self.ctx.n)
        ids = _rng(self.seed, 1, t).choice(self.ctx.n, size=b, replace=False)
        self.in_batch.fill(False)
        self.in_batch[ids] = True

    def process_task(self, phase, task, local):
        ids = task.start + np.flatnonzero(self.in_batch[task.start:task.stop])
        if ids.size == 0:
            return
        rows = self.ctx.fetch(ids, local, task)
        dist = all_distances(rows, self.C.current)
        local.dist_comps += dist.size
        a = np.argmin(dist, axis=1).astype(np.int32)
        local.reassigned += int((self.labels[ids] != a).sum())
        self.labels[ids] = a
        partial = np.zeros((self.k, self.ctx.d))
        np.add.at(partial, a, rows)
        local.sums += quantize(partial, self.q)
        local.counts += np.bincount(a, minlength=self.k).astype(np.int32)
        best = dist[np.arange(ids.size), a]
        local.objective_parts.append((task.start, math.fsum(best * best)))

    def end_iteration(self, t, states):
        sums, counts = reduce(states)
        for s in states:
            s.alloc(self.k, self.ctx.d)
        new = self.C.current.copy()
        hit = counts > 0
        # Applying c <- (1 - 1/N) c + (1/N) v for each of the m_c batch points in
        # turn telescopes to the running mean below.
        prev = self.cum[hit, None].astype(np.float64)
        new[hit] = (prev * new[hit] + sums[hit]) / (prev + counts[hit, None])
        self.cum += counts
        self.C.advance(new)
        self.C.counts = self.cum.copy()
        parts = sorted(p for s in states for p in s.objective_parts)
        reassigned = sum(s.reassigned for s in states)
        cfg = self.ctx.cfg
        done = check_convergence(self.C, reassigned, self.ctx.n, cfg.tol, cfg.convergence)
        return IterationOutcome(reassigned, math.fsum(v for _, v in parts), done)

    def result(self):
        return self.C, self.labels.copy()


def _full_assign(m, cents) -> np.ndarray:
    a, _ = _nearest_blocked(_values(m) if not hasattr(m, "peek") else m.values, cents)
    return a.astype(np.int32)


def _nearest_blocked(values, cents, block=65536):
    out_a = np.empty(values.shape[0], dtype=np.int64)
    out_d = np.empty(values.shape[0])
    for s in range(0, values.shape[0], block):
        dist = all_distances(np.asarray(values[s:s + block]), cents)
        out_a[s:s + block] = np.argmin(dist, axis=1)
        out_d[s:s + block] = dist[np.arange(dist.shape[0]), out_a[s:s + block]]
    return out_a, out_d


def mbkmeans(m, k: int, batch: BatchSpec | float = 0.2,
             init: InitSpec | CentroidSet | None = None,
             cfg: EngineConfig | None = None, on_iteration=None) -> ClusterResult:
    cfg = cfg or EngineConfig()
    batch = batch if isinstance(batch, BatchSpec) else BatchSpec(float(batch))
    C0 = init if isinstance(init, CentroidSet) else init_centroids(_init_view(m), k, init)
    alg = MiniBatchKMeans(k, C0, batch, cfg.seed)
    (C, labels), trace = run_mm(alg, m, cfg, on_iteration)
    # Labels of rows never sampled are filled by one final full assignment.
    assign = _full_assign(m, C.current)
    res = ClusterResult(C, assign, trace.metrics, trace.iterations, trace.converged,
                        trace.metrics[-1].objective if trace.metrics else float("nan"),
                        {"batch_frac": batch.frac, "batch_labels": labels}, trace)
    # Final assignment is against the final centroids, not the previous ones.
    res.centroids = CentroidSet(C.current, C.current.copy(), C.counts, np.zeros(k))
    return res


# -- fuzzy c-means ------------------------------------------------------------

def fcm_memberships(dist: np.ndarray, z: float) -> np.ndarray:
    """Membership rows u_ic = 1 / sum_j (d_ic / d_ij)^(2/(z-1)).

    A row that coincides with a centroid gets a crisp membership on the lowest
    such centroid.
    """
    if not z > 1:
        raise UsageError("fuzziness z must be > 1")
    dist = np.atleast_2d(np.asarray(dist, dtype=np.float64))
    u = np.empty_like(dist)
    zero = dist == 0
    hit = zero.any(axis=1)
    if hit.any():
        u[hit] = 0.0
        first = np.argmax(zero[hit], axis=1)
        u[np.flatnonzero(hit), first] = 1.0
    soft = ~hit
    if soft.any():
        p = 2.0 / (z - 1.0)
        logw = -p * np.log(dist[soft])
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        u[soft] = w / w.sum(axis=1, keepdims=True)
    return u


class FuzzyCMeans(MMAlgorithm):
    """Two-phase iteration: memberships (M1), then weighted centroids (M2)."""

    name = "fcmeans"
    phases = 2
    preferred_scheduler = "static"

    def __init__(self, k: int, centroids: CentroidSet, z: float = 2.0, block_rows: int = 256):
        if not z > 1:
            raise UsageError("fuzziness z must be > 1")
        self.k = k
        self.C = centroids.copy()
        self.z = z
        self.block_rows = max(1, int(block_rows))

    def setup(self, ctx):
        super().setup(ctx)
        if self.k > ctx.n:
            raise UsageError(f"k={self.k} exceeds n={ctx.n}")
        # Point-major contribution matrix: row i holds the k memberships of point i.
        self.U = np.zeros((ctx.n, self.k))
        self.labels = np.full(ctx.n, UNASSIGNED, dtype=np.int32)
        self.q = sum_quantum(4.0 * ctx.n * max(ctx.source.max_abs, 1e-300))
        self.qw = sum_quantum(4.0 * ctx.n)
        self.J = []

    def init_local(self, local):
        local.alloc(self.k, self.ctx.d)
        local.scratch["w"] = np.zeros(self.k)

    def process_task(self, phase, task, local):
        rows = self.ctx.fetch_task(task, local)
        if phase == 0:
            parts = []
            for b in range(0, task.count, self.block_rows):
                blk = rows[b:b + self.block_rows]
                dist = all_distances(blk, self.C.current)
                local.dist_comps += dist.size
                u = fcm_memberships(dist, self.z)
                s = task.start + b
                self.U[s:s + blk.shape[0]] = u
                lab = np.argmax(u, axis=1).astype(np.int32)
                local.reassigned += int((self.labels[s:s + blk.shape[0]] != lab).sum())
                self.labels[s:s + blk.shape[0]] = lab
                parts.append(math.fsum((u ** self.z * dist * dist).ravel()))
            local.objective_parts.append((task.start, math.fsum(parts)))
        else:
            w = self.U[task.start:task.stop] ** self.z
            local.sums += quantize(w.T @ rows, self.q)
            local.scratch["w"] += quantize(w.sum(axis=0), self.qw)

    def end_phase(self, phase, states):
        if phase != 1:
            return
        num, _ = reduce(states)
        den = np.zeros(self.k)
        for s in sorted(states, key=lambda s: s.tid):
            den += s.scratch["w"]
            s.scratch["w"].fill(0.0)
        for s in states:
            s.alloc(self.k, self.ctx.d)
        new = self.C.current.copy()
        ok = den > 0
        new[ok] = num[ok] / den[ok, None]
        self.C.advance(new)

    def end_iteration(self, t, states):
        parts = sorted(p for s in states for p in s.objective_parts)
        J = math.fsum(v for _, v in parts)
        self.J.append(J)
        reassigned = sum(s.reassigned for s in states)
        cfg = self.ctx.cfg
        done = check_convergence(self.C, reassigned, self.ctx.n, cfg.tol, cfg.convergence)
        return IterationOutcome(reassigned, J, done)

    def aux_bytes(self):
        return self.U.nbytes + self.labels.nbytes

    def result(self):
        return self.C, self.labels.copy()


def fcmeans(m, k: int, z: float = 2.0, init: InitSpec | CentroidSet | None = None,
            cfg: EngineConfig | None = None, block_rows: int = 256,
            on_iteration=None) -> ClusterResult:
    cfg = cfg or EngineConfig(scheduler="static", convergence="drift", tol=1e-9)
    if not z > 1:
        raise UsageError("fuzziness z must be > 1")
    C0 = init if isinstance(init, CentroidSet) else init_centroids(_init_view(m), k, init)
    alg = FuzzyCMeans(k, C0, z, block_rows)
    (C, labels), trace = run_mm(alg, m, cfg, on_iteration)
    res = _pack((C, labels), trace, z=z)
    res.extra["memberships"] = alg.U
    res.extra["J"] = list(alg.J)
    return res


# -- CLARA k-medoids ----------------------------------------------------------

def swap_search(D: np.ndarray, medoids: list[int]) -> tuple[list[int], float]:
    """PAM-style swap on a dissimilarity matrix until no swap lowers the cost.

    ``medoids`` are indices into ``D``. Each pass visits the medoids in order
    and makes the best improving swap for each.
    """
    s = D.shape[0]
    med = list(medoids)
    cost = float(D[:, med].min(axis=1).sum())
    improved = True
    while improved:
        improved = False
        for j in range(len(med)):
            others = med[:j] + med[j + 1:]
            base = D[:, others].min(axis=1) if others else np.full(s, np.inf)
            trial = np.minimum(base[:, None], D).sum(axis=0)
            trial[med] = np.inf
            h = int(np.argmin(trial))
            if trial[h] < cost * (1 - 1e-12) - 1e-300:
                med[j] = h
                cost = float(trial[h])
                improved = True
    return med, cost


class Clara(MMAlgorithm):
    name = "kmedoids"

    def __init__(self, k: int, sample_pct: float = 10.0, seed: int = 0):
        if not (0 < sample_pct <= 100):
            raise UsageError("sample_pct must be in (0, 100]")
        self.k = k
        self.sample_pct = sample_pct
        self.seed = seed

    def setup(self, ctx):
        super().setup(ctx)
        self.sample_size = min(ctx.n, math.ceil(self.sample_pct * ctx.n / 100.0))
        if self.sample_size < self.k:
            raise UsageError(f"sample of {self.sample_size} rows is smaller than k={self.k}")
        self.medoids = np.sort(_rng(self.seed, 2).choice(ctx.n, size=self.k, replace=False))
        self.best = (math.inf, self.medoids.copy(), None)
        self.assign = np.full(ctx.n, UNASSIGNED, dtype=np.int32)
        self.history = []

    def begin_iteration(self, t):
        ctx = self.ctx
        rng = _rng(self.seed, 3, t)
        current = self.best[1]
        pool = np.setdiff1d(np.arange(ctx.n), current)
        extra = rng.choice(pool, size=self.sample_size - self.k, replace=False)
        sample = np.sort(np.concatenate([current, extra]))
        rows = ctx.source.fetch(sample, ctx.coordinator, 0, t)
        D = all_distances(rows, rows)
        ctx.coordinator.dist_comps += D.size
        start = [int(np.searchsorted(sample, m)) for m in current]
        med, _ = swap_search(D, start)
        self.medoids = np.sort(sample[med])
        self.medoid_rows = ctx.source.fetch(self.medoids, ctx.coordinator, 0, t)

    def process_task(self, phase, task, local):
        rows = self.ctx.fetch_task(task, local)
        dist = all_distances(rows, self.medoid_rows)
        local.dist_comps += dist.size
        a = np.argmin(dist, axis=1).astype(np.int32)
        sl = slice(task.start, task.stop)
        local.reassigned += int((self.assign[sl] != a).sum())
        self.assign[sl] = a
        local.objective_parts.append((task.start, math.fsum(dist[np.arange(task.count), a])))

    def end_iteration(self, t, states):
        parts = sorted(p for s in states for p in s.objective_parts)
        cost = math.fsum(v for _, v in parts)
        if cost < self.best[0]:
            self.best = (cost, self.medoids.copy(), self.assign.copy())
        self.history.append(cost)
        reassigned = sum(s.reassigned for s in states)
        cfg = self.ctx.cfg
        done = check_convergence(None, reassigned, self.ctx.n, cfg.tol,
                                 "fraction" if cfg.convergence == "drift" else cfg.convergence)
        return IterationOutcome(reassigned, self.best[0], done)

    def aux_bytes(self):
        return self.assign.nbytes + self.medoids.nbytes

    def result(self):
        return self.best


def kmedoids_clara(m, k: int, sample_pct: float = 10.0, iters: int = 5,
                   cfg: EngineConfig | None = None, on_iteration=None) -> ClusterResult:
    base = cfg or EngineConfig()
    cfg = EngineConfig(**{**base.__dict__, "max_iters": iters})
    alg = Clara(k, sample_pct, cfg.seed)
    (cost, medoids, assign), trace = run_mm(alg, m, cfg, on_iteration)
    values = _init_view(m)
    values = values.values if isinstance(values, DataMatrix) else values
    cents = CentroidSet(np.asarray(values)[medoids])
    if assign is None:
        assign = np.full(len(values), UNASSIGNED, dtype=np.int32)
    return ClusterResult(cents, assign, trace.metrics, trace.iterations, trace.converged,
                         cost, {"medoids": medoids, "cost_history": list(alg.history)}, trace)
