"""Iterative divisive clustering: H-means, X-means and G-means.

Rows are never moved. Every point carries a 64-bit key whose upper 32 bits
name its current leaf and whose lower 32 bits are the row index. An outer
round runs 2-means inside every active leaf at once (tasks are plain row
blocks; rows of finished leaves are skipped), then one split pass gathers the
statistics each leaf needs for its split decision. Spawning children only
rewrites keys.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .core import UsageError, row_distances
from .engine import EngineConfig, IterationOutcome, MMAlgorithm, quantize, run_mm, sum_quantum

ROW_BITS = 32
ROW_MASK = np.uint64((1 << ROW_BITS) - 1)
MAX_NODES = (1 << 32) - 1
VARIANTS = ("hmeans", "xmeans", "gmeans")

# Critical values of the small-sample corrected A^2* for the normal case with
# estimated mean and variance.
AD_CRITICAL = {0.15: 0.576, 0.10: 0.656, 0.05: 0.787, 0.025: 0.918, 0.01: 1.092,
               0.0001: 1.8692}


class CapacityError(RuntimeError):
    pass


# -- keys and tree -----------------------------------------------------------

def make_keys(leaf_ids, rows) -> np.ndarray:
    leaf = np.asarray(leaf_ids, dtype=np.uint64)
    return (leaf << np.uint64(ROW_BITS)) | np.asarray(rows, dtype=np.uint64)


def key_leaf(keys) -> np.ndarray:
    return (np.asarray(keys, dtype=np.uint64) >> np.uint64(ROW_BITS)).astype(np.int64)


def key_row(keys) -> np.ndarray:
    return (np.asarray(keys, dtype=np.uint64) & ROW_MASK).astype(np.int64)


@dataclass
class HNode:
    id: int
    parent: int | None
    centroid: np.ndarray
    count: int
    level: int = 0
    state: str = "active"      # active | converged | frozen | split
    sse: float = 0.0           # sum of squared distances of members to ``centroid``
    far_row: int = -1          # member farthest from ``centroid``
    far_dist: float = 0.0


class ConvergenceBitmap:
    """One bit per node id; a set bit is never cleared."""

    def __init__(self, size: int = 64):
        self.bits = np.zeros(size, dtype=bool)

    def _grow(self, idx: int) -> None:
        if idx >= self.bits.size:
            bigger = np.zeros(max(idx + 1, 2 * self.bits.size), dtype=bool)
            bigger[:self.bits.size] = self.bits
            self.bits = bigger

    def set(self, idx: int) -> None:
        self._grow(idx)
        self.bits[idx] = True

    def __contains__(self, idx: int) -> bool:
        return idx < self.bits.size and bool(self.bits[idx])

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass
class HTree:
    nodes: dict = field(default_factory=dict)
    next_id: int = 0
    levels: int = 0
    bitmap: ConvergenceBitmap = field(default_factory=ConvergenceBitmap)

    def add(self, parent, centroid, count, level) -> HNode:
        if self.next_id > MAX_NODES:
            raise CapacityError("cluster id space exhausted")
        node = HNode(self.next_id, parent, np.asarray(centroid, dtype=np.float64), count, level)
        self.nodes[node.id] = node
        self.next_id += 1
        return node

    def leaves(self) -> list[HNode]:
        return [n for n in self.nodes.values() if n.state != "split"]

    def active(self) -> list[HNode]:
        return [n for n in self.nodes.values() if n.state == "active"]

    def converge(self, node: HNode, state: str = "converged") -> None:
        node.state = state
        self.bitmap.set(node.id)


def spawn_clusters(tree: HTree, leaf: HNode, centroids, counts=(0, 0),
                   keys: np.ndarray | None = None, side: np.ndarray | None = None):
    """Replace ``leaf`` by two children; optionally rewrite member keys.

    ``side`` gives, for every key, which child (0/1) a member of ``leaf``
    joins. Only metadata changes; no row data is touched.
    """
    if tree.next_id + 1 > MAX_NODES:
        raise CapacityError("cluster id space exhausted")
    a = tree.add(leaf.id, centroids[0], int(counts[0]), leaf.level + 1)
    b = tree.add(leaf.id, centroids[1], int(counts[1]), leaf.level + 1)
    leaf.state = "split"
    tree.levels = max(tree.levels, leaf.level + 1)
    if keys is not None:
        rewrite_keys(keys, {leaf.id: (a.id, b.id)}, side)
    return a.id, b.id


def rewrite_keys(keys: np.ndarray, spawned: dict, side: np.ndarray, sl=slice(None)) -> None:
    """Move members of split leaves to their child, in place, within ``sl``."""
    block = keys[sl]
    leaf = key_leaf(block)
    for parent, (c0, c1) in spawned.items():
        mine = leaf == parent
        if mine.any():
            child = np.where(side[sl][mine] == 0, c0, c1)
            block[mine] = make_keys(child, key_row(block[mine]))


# -- split statistics ----------------------------------------------------------

def bic_from_stats(counts, sse: float, d: int) -> float:
    """BIC of a spherical Gaussian mixture fit by maximum likelihood.

    log L = sum_k R_k log(R_k / R) - (R d / 2) (log(2 pi var) + 1), with the
    pooled MLE variance var = sse / (R d); p = K (d + 1) free parameters.
    """
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    R = counts.sum()
    K = counts.size
    if R <= 0:
        return -math.inf
    var = sse / (R * d)
    if not var > 0:
        return -math.inf
    loglik = float(np.sum(counts * np.log(counts / R))) - 0.5 * R * d * (math.log(2 * math.pi * var) + 1)
    params = K * (d + 1)
    return loglik - 0.5 * params * math.log(R)


def bic_score(points, model: str = "one", labels=None) -> float:
    """BIC of the one-center or two-center fit of ``points``.

    For ``"two"``, ``labels`` (0/1) define the partition; centers are the
    partition means.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if model == "one":
        c = X.mean(axis=0)
        return bic_from_stats([X.shape[0]], float(((X - c) ** 2).sum()), X.shape[1])
    if model != "two":
        raise UsageError("model must be 'one' or 'two'")
    labels = np.asarray(labels)
    counts, total = [], 0.0
    for side in (0, 1):
        part = X[labels == side]
        if len(part) == 0:
            return -math.inf
        counts.append(len(part))
        total += float(((part - part.mean(axis=0)) ** 2).sum())
    if X.shape[0] < 2:
        return -math.inf
    return bic_from_stats(counts, total, X.shape[1])


def split_decision_xmeans(counts, sse_one: float, sse_two: float, d: int) -> bool:
    if min(counts) <= 0 or not sse_one > 0:
        return False
    one = bic_from_stats([sum(counts)], sse_one, d)
    two = bic_from_stats(counts, sse_two, d)
    return two > one


def split_decision_hmeans(level: int, l_max: int, distinct_points: bool) -> bool:
    return level < l_max and distinct_points


def anderson_darling(x) -> float:
    """A^2 of a sample against the normal with estimated mean and variance."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    m = x.size
    sd = x.std(ddof=1)
    if not sd > 0:
        return math.nan
    z = (x - x.mean()) / sd
    j = np.arange(1, m + 1)
    s = np.sum((2 * j - 1) * (log_ndtr(z) + log_ndtr(-z[::-1])))
    return float(-m - s / m)


def ad_corrected(a2: float, m: int) -> float:
    return a2 * (1 + 4.0 / m - 25.0 / (m * m))


def ad_critical(alpha: float) -> float:
    for level, value in AD_CRITICAL.items():
        if math.isclose(alpha, level, rel_tol=1e-9):
            return value
    raise UsageError(f"no critical value tabulated for alpha={alpha}; choose from {sorted(AD_CRITICAL)}")


def anderson_darling_decision(points=None, c1=None, c2=None, alpha: float = 0.0001,
                              projections=None) -> bool:
    """Split when the projection onto c1 - c2 is not plausibly normal."""
    crit = ad_critical(alpha)
    if projections is None:
        w = np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64)
        if not np.any(w != 0):
            return False
        projections = np.asarray(points, dtype=np.float64) @ w
    proj = np.asarray(projections, dtype=np.float64)
    m = proj.size
    if m < 8:
        return False
    a2 = anderson_darling(proj)
    if math.isnan(a2):
        return False
    return ad_corrected(a2, m) > crit


# -- the iterative engine ------------------------------------------------------

@dataclass
class HierParams:
    kmax: int = 32
    l_max: int = 8
    alpha: float = 0.0001
    inner_iters: int = 20
    inner_tol: float = 0.0

    def __post_init__(self):
        if self.kmax < 1 or self.l_max < 1 or self.inner_iters < 1:
            raise UsageError("kmax, l_max and inner_iters must be >= 1")


class Hierarchical(MMAlgorithm):
    """Outer split rounds over a flat 2-means kernel.

    Iteration kinds: ``mean`` and ``far`` (root statistics), ``inner``
    (one 2-means step in every unfinished active leaf) and ``split`` (child
    statistics, decision, then a metadata-only spawn phase).
    """

    phases = 2

    def __init__(self, variant: str, params: HierParams):
        if variant not in VARIANTS:
            raise UsageError(f"unknown hierarchical algorithm {variant!r}")
        self.variant = variant
        self.name = variant
        self.p = params

    def setup(self, ctx):
        super().setup(ctx)
        n, d = ctx.n, ctx.d
        if n >= 1 << ROW_BITS:
            raise CapacityError("row ids do not fit in 32 bits")
        self.tree = HTree()
        self.root = self.tree.add(None, np.zeros(d), n, 0)
        self.keys = make_keys(np.zeros(n, dtype=np.int64), np.arange(n))
        self.side = np.zeros(n, dtype=np.int8)
        self.proj = np.zeros(n) if self.variant == "gmeans" else None
        self.kind = "mean"
        self.inner_round = 0
        self.spawned: dict = {}
        self.split_rounds = 0
        self.spawn_rounds = 0
        bound = 4.0 * n * max(ctx.source.max_abs, 1e-300)
        self.q = sum_quantum(bound)
        self.q_sse = sum_quantum(bound * 4.0 * max(ctx.source.max_abs, 1e-300) * d)
        self._set_slots([self.root])
        self.history = []

    # slot bookkeeping: active leaves get dense indices for the accumulators
    def _set_slots(self, leaves):
        self.slot_nodes = list(leaves)
        self.slot_of = np.full(self.tree.next_id + 2, -1, dtype=np.int64)
        for j, node in enumerate(self.slot_nodes):
            self.slot_of[node.id] = j
        A = len(self.slot_nodes)
        d = self.ctx.d
        self.children = np.zeros((A, 2, d))
        self.inner_live = np.ones(A, dtype=bool)
        if not hasattr(self, "_round_id"):
            self._round_id = 0
        self._round_id += 1

    def _scratch(self, local):
        A = len(self.slot_nodes)
        sc = local.scratch
        if sc.get("round") != self._round_id:
            sc["round"] = self._round_id
            local.alloc(2 * A, self.ctx.d)
            sc["sse"] = np.zeros(2 * A)
            sc["far_d"] = np.full(2 * A, -1.0)
            sc["far_row"] = np.full(2 * A, -1, dtype=np.int64)
            sc["moved"] = np.zeros(A, dtype=np.int64)
        return sc

    def _members(self, task):
        leaf = key_leaf(self.keys[task.start:task.stop])
        slot = np.where(leaf < self.slot_of.size, self.slot_of[np.minimum(leaf, self.slot_of.size - 1)], -1)
        mask = slot >= 0
        if self.kind == "inner":
            mask &= self.inner_live[np.maximum(slot, 0)]
        local_idx = np.flatnonzero(mask)
        return task.start + local_idx, slot[local_idx]

    def tasks(self, phase):
        if phase == 1:
            return self.ctx.tasks if self.spawned else []
        return self.ctx.tasks

    def process_task(self, phase, task, local):
        if phase == 1:
            rewrite_keys(self.keys, self.spawned, self.side, slice(task.start, task.stop))
            return
        ids, slot = self._members(task)
        if ids.size == 0:
            return
        sc = self._scratch(local)
        rows = self.ctx.fetch(ids, local, task)
        if self.kind == "mean":
            np.add.at(local.sums, slot * 2, rows)
            local.counts += np.bincount(slot * 2, minlength=local.counts.size).astype(np.int32)
            return
        if self.kind == "far":
            mu = np.array([self.slot_nodes[s].centroid for s in range(len(self.slot_nodes))])
            dist = row_distances(rows, mu[slot])
            local.dist_comps += ids.size
            self._stats(sc, slot * 2, dist, ids)
            return
        c0 = self.children[slot, 0]
        c1 = self.children[slot, 1]
        if self.kind == "inner":
            d0 = row_distances(rows, c0)
            d1 = row_distances(rows, c1)
            local.dist_comps += 2 * ids.size
            side = (d1 < d0).astype(np.int8)
            moved = side != self.side[ids]
            local.reassigned += int(moved.sum())
            np.add.at(sc["moved"], slot[moved], 1)
            self.side[ids] = side
            idx = slot * 2 + side
            partial = np.zeros_like(local.sums)
            np.add.at(partial, idx, rows)
            local.sums += quantize(partial, self.q)
            local.counts += np.bincount(idx, minlength=local.counts.size).astype(np.int32)
            return
        # split pass: distances to the final child centroids
        side = self.side[ids].astype(np.int64)
        own = np.where(side[:, None] == 0, c0, c1)
        dist = row_distances(rows, own)
        local.dist_comps += ids.size
        idx = slot * 2 + side
        local.counts += np.bincount(idx, minlength=local.counts.size).astype(np.int32)
        self._stats(sc, idx, dist, ids)
        if self.proj is not None:
            w = c0 - c1
            self.proj[ids] = np.einsum("ij,ij->i", rows, w)

    def _stats(self, sc, idx, dist, ids):
        sse = np.zeros_like(sc["sse"])
        np.add.at(sse, idx, dist * dist)
        sc["sse"] += quantize(sse, self.q_sse)
        # farthest member per accumulator slot; ties go to the lowest row id
        order = np.lexsort((ids, -dist, idx))
        first = np.r_[True, idx[order][1:] != idx[order][:-1]]
        top = order[first]
        for j, dd, r in zip(idx[top], dist[top], ids[top]):
            if dd > sc["far_d"][j] or (dd == sc["far_d"][j] and r < sc["far_row"][j]):
                sc["far_d"][j] = dd
                sc["far_row"][j] = r

    def _merge(self, states):
        A2 = 2 * len(self.slot_nodes)
        sums = np.zeros((A2, self.ctx.d))
        counts = np.zeros(A2, dtype=np.int64)
        sse = np.zeros(A2)
        far_d = np.full(A2, -1.0)
        far_row = np.full(A2, -1, dtype=np.int64)
        moved = np.zeros(A2 // 2, dtype=np.int64)
        for s in sorted(states, key=lambda s: s.tid):
            sc = s.scratch
            if sc.get("round") != self._round_id:
                continue
            sums += s.sums
            counts += s.counts
            sse += sc["sse"]
            moved += sc["moved"]
            better = (sc["far_d"] > far_d) | ((sc["far_d"] == far_d) & (sc["far_row"] >= 0)
                                              & ((far_row < 0) | (sc["far_row"] < far_row)))
            far_d[better] = sc["far_d"][better]
            far_row[better] = sc["far_row"][better]
            sc["round"] = None
        return sums, counts, sse, far_d, far_row, moved

    def end_phase(self, phase, states):
        if phase == 1:
            self.spawned = {}
            return
        if self.kind == "split":
            self._decide(states)

    def _seed_children(self, node: HNode):
        """Seeds mu +/- 0.5 (far - mu), far being the member farthest from mu."""
        if node.far_row < 0:
            return np.stack([node.centroid, node.centroid])
        far = self.ctx.source.fetch(np.array([node.far_row]), self.ctx.coordinator, 0,
                                    self.ctx.iteration)[0]
        step = 0.5 * (far - node.centroid)
        return np.stack([node.centroid + step, node.centroid - step])

    def _viable(self, node: HNode) -> bool:
        """Whether a fresh leaf could split at all; if not, it is finished now."""
        if node.count < 2 or not node.sse > 0:
            self.tree.converge(node)
            return False
        if self.variant == "hmeans" and node.level >= self.p.l_max:
            self.tree.converge(node)
            return False
        if self.variant == "gmeans" and node.count < 8:
            self.tree.converge(node)
            return False
        if len(self.tree.leaves()) >= self.p.kmax:
            self.tree.converge(node, "frozen")
            return False
        return True

    def _start_round(self, leaves):
        live = [n for n in leaves if self._viable(n)]
        self._set_slots(live)
        for j, node in enumerate(live):
            self.children[j] = self._seed_children(node)
        self.inner_round = 0
        self.kind = "inner" if live else "done"

    def _decide(self, states):
        sums, counts, sse, far_d, far_row, _ = self._merge(states)
        self.split_rounds += 1
        new_leaves = []
        if self.proj is not None:
            pts, slots = self._all_members()
        for j, node in enumerate(self.slot_nodes):
            n0, n1 = int(counts[2 * j]), int(counts[2 * j + 1])
            ok = n0 > 0 and n1 > 0
            if ok and len(self.tree.leaves()) >= self.p.kmax:
                self.tree.converge(node, "frozen")
                continue
            if ok:
                if self.variant == "hmeans":
                    ok = split_decision_hmeans(node.level, self.p.l_max, node.sse > 0)
                elif self.variant == "xmeans":
                    ok = split_decision_xmeans([n0, n1], node.sse, sse[2 * j] + sse[2 * j + 1],
                                               self.ctx.d)
                else:
                    proj = self.proj[pts[slots == j]]
                    ok = anderson_darling_decision(projections=proj, alpha=self.p.alpha)
            if not ok:
                self.tree.converge(node)
                continue
            a, b = spawn_clusters(self.tree, node, self.children[j], (n0, n1))
            self.spawned[node.id] = (a, b)
            for side, cid in ((0, a), (1, b)):
                child = self.tree.nodes[cid]
                child.sse = float(sse[2 * j + side])
                child.far_row = int(far_row[2 * j + side])
                child.far_dist = float(far_d[2 * j + side])
                new_leaves.append(child)
        self._pending_round = new_leaves
        if self.spawned:
            self.spawn_rounds += 1

    def _all_members(self):
        leaf = key_leaf(self.keys)
        slot = np.where(leaf < self.slot_of.size, self.slot_of[np.minimum(leaf, self.slot_of.size - 1)], -1)
        pts = np.flatnonzero(slot >= 0)
        return pts, slot[pts]

    def end_iteration(self, t, states):
        kind = self.kind
        reassigned = 0
        if kind == "mean":
            sums, counts, *_ = self._merge(states)
            self.root.centroid = sums[0] / counts[0]
            self.kind = "far"
            self._round_id += 1
        elif kind == "far":
            _, _, sse, far_d, far_row, _ = self._merge(states)
            self.root.sse = float(sse[0])
            self.root.far_row = int(far_row[0])
            self.root.far_dist = float(far_d[0])
            self._start_round([self.root])
        elif kind == "inner":
            sums, counts, _, _, _, moved = self._merge(states)
            reassigned = sum(s.reassigned for s in states)
            A = len(self.slot_nodes)
            sums = sums.reshape(A, 2, -1)
            counts = counts.reshape(A, 2)
            live = self.inner_live.copy()
            for j in np.flatnonzero(live):
                for side in (0, 1):
                    if counts[j, side] > 0:
                        self.children[j, side] = sums[j, side] / counts[j, side]
            self.inner_round += 1
            self.inner_live &= ~((moved == 0) & live)
            if self.inner_round >= self.p.inner_iters or not self.inner_live.any():
                self.kind = "split"
            self._round_id += 1
        elif kind == "split":
            for s in states:
                s.scratch["round"] = None
            self._start_round(self._pending_round)
        self.history.append(kind)
        done = self.kind == "done"
        return IterationOutcome(reassigned, self._objective(), done)

    def _objective(self) -> float:
        return math.fsum(n.sse for n in self.tree.leaves() if n.state != "active") + \
            math.fsum(n.sse for n in self.tree.leaves() if n.state == "active")

    def aux_bytes(self):
        total = self.keys.nbytes + self.side.nbytes + self.tree.bitmap.bits.nbytes
        if self.proj is not None:
            total += self.proj.nbytes
        return total

    def result(self):
        return self.tree, self.keys


@dataclass
class HierResult:
    tree: HTree
    keys: np.ndarray
    assign: np.ndarray
    leaf_ids: list
    metrics: list
    iterations: int
    split_rounds: int
    kinds: list
    trace: object = None
    spawn_rounds: int = 0

    def __iter__(self):
        return iter((self.tree, self.assign, self.metrics))

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    @property
    def centroids(self) -> np.ndarray:
        return np.array([self.tree.nodes[i].centroid for i in self.leaf_ids])


def run_hierarchical(algorithm: str, m, params: HierParams | None = None,
                     cfg: EngineConfig | None = None, on_iteration=None) -> HierResult:
    params = params or HierParams()
    base = cfg or EngineConfig()
    cfg = EngineConfig(**{**base.__dict__, "max_iters": max(base.max_iters, 100000),
                          "convergence": "iterations"})
    alg = Hierarchical(algorithm, params)
    (tree, keys), trace = run_mm(alg, m, cfg, on_iteration)
    leaf_ids = sorted(n.id for n in tree.leaves())
    index = {lid: i for i, lid in enumerate(leaf_ids)}
    leaf = key_leaf(keys)
    lut = np.zeros(tree.next_id, dtype=np.int32)
    for lid, i in index.items():
        lut[lid] = i
    assign = lut[leaf]
    return HierResult(tree, keys, assign, leaf_ids, trace.metrics, trace.iterations,
                      alg.split_rounds, alg.history, trace, alg.spawn_rounds)


def hmeans(m, l_max: int = 1, cfg=None, **kw) -> HierResult:
    return run_hierarchical("hmeans", m, HierParams(l_max=l_max, kmax=kw.pop("kmax", 1 << 20), **kw), cfg)


def xmeans(m, kmax: int = 32, cfg=None, **kw) -> HierResult:
    return run_hierarchical("xmeans", m, HierParams(kmax=kmax, **kw), cfg)


def gmeans(m, kmax: int = 32, alpha: float = 0.0001, cfg=None, **kw) -> HierResult:
    return run_hierarchical("gmeans", m, HierParams(kmax=kmax, alpha=alpha, **kw), cfg)
