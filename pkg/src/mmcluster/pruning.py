"""Distance pruning for Lloyd-style assignment.

Three interchangeable bound states share one block-assignment interface:

* :class:`NoPruneState` computes all k distances per point.
* :class:`MtiState` keeps one upper bound per point plus the k x k centroid
  geometry (memory Theta(n + k^2)).
* :class:`TiState` adds Elkan's n x k lower-bound matrix (Theta(n k)).

All of them return the exact argmin with ties broken to the lowest centroid
index, so switching between them never changes an assignment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import UNASSIGNED, CentroidSet, point_distances, row_distances

# Relative pad applied to upper bounds when they are compared against
# geometric thresholds; absorbs rounding in the computed distances.
BOUND_PAD = 1e-12


def update_centroid_geometry(C) -> tuple[np.ndarray, np.ndarray]:
    """Inter-centroid distances and safe radius s[c] = 0.5 * min_{c' != c} cdist."""
    cents = C.current if isinstance(C, CentroidSet) else np.asarray(C, dtype=np.float64)
    k = cents.shape[0]
    cdist = np.zeros((k, k))
    for c in range(k):
        cdist[:, c] = point_distances(cents, cents[c])
    cdist = np.minimum(cdist, cdist.T)
    np.fill_diagonal(cdist, 0.0)
    if k == 1:
        return cdist, np.array([np.inf])
    masked = cdist + np.diag(np.full(k, np.inf))
    return cdist, 0.5 * masked.min(axis=1)


def _skip(u, bound, c, a):
    """True where centroid ``c`` provably cannot beat (u, a) lexicographically."""
    padded = u * (1.0 + BOUND_PAD)
    return (padded < bound) | ((padded == bound) & (c > a))


@dataclass
class Counters:
    dist_comps: int = 0
    prune_c1: int = 0
    prune_c2: int = 0
    prune_c3: int = 0


@dataclass
class BlockResult:
    ids: np.ndarray          # global row ids whose data was fetched
    rows: np.ndarray         # their row data
    old: np.ndarray          # assignment before this iteration
    new: np.ndarray          # assignment after
    dist: np.ndarray         # exact distance to the new centroid


class NoPruneState:
    kind = "none"

    def __init__(self, n: int, k: int):
        self.n, self.k = n, k
        self.assign = np.full(n, UNASSIGNED, dtype=np.int32)
        self.geometry_needed = False

    def on_new_centroids(self, C: CentroidSet, drift) -> None:
        pass

    def invalidate(self, rows) -> None:
        pass

    def begin_block(self, start: int, count: int, drift) -> None:
        pass

    def assign_block(self, start, count, C, fetch, ctr) -> BlockResult:
        ids = np.arange(start, start + count)
        rows = fetch(ids)
        cents = C.current
        dist = np.empty((count, self.k))
        for c in range(self.k):
            dist[:, c] = point_distances(rows, cents[c])
        ctr.dist_comps += count * self.k
        new = np.argmin(dist, axis=1).astype(np.int32)
        old = self.assign[start:start + count].copy()
        self.assign[start:start + count] = new
        return BlockResult(ids, rows, old, new, dist[np.arange(count), new])

    def nbytes(self) -> int:
        return self.assign.nbytes


class MtiState(NoPruneState):
    kind = "mti"

    def __init__(self, n: int, k: int):
        super().__init__(n, k)
        self.u = np.full(n, np.inf)
        self.cdist = np.zeros((k, k))
        self.s = np.full(k, np.inf)
        self.drift = np.zeros(k)
        self.geometry_needed = True

    def on_new_centroids(self, C: CentroidSet, drift) -> None:
        self.cdist, self.s = update_centroid_geometry(C)
        self.drift = np.asarray(drift, dtype=np.float64).copy()

    def invalidate(self, rows) -> None:
        self.u[rows] = np.inf

    def begin_block(self, start: int, count: int, drift) -> None:
        sl = slice(start, start + count)
        a = self.assign[sl]
        live = a != UNASSIGNED
        self.u[sl][live] += self.drift[a[live]]

    def _cold(self, start, count, C, fetch, ctr, local_ids):
        """First visit: no bounds yet, compute every distance."""
        ids = start + local_ids
        rows = fetch(ids)
        dist = np.empty((ids.size, self.k))
        for c in range(self.k):
            dist[:, c] = point_distances(rows, C.current[c])
        ctr.dist_comps += ids.size * self.k
        new = np.argmin(dist, axis=1).astype(np.int32)
        return ids, rows, new, dist

    def assign_block(self, start, count, C, fetch, ctr) -> BlockResult:
        sl = slice(start, start + count)
        a = self.assign[sl]
        u = self.u[sl]
        old = a.copy()
        cold = np.flatnonzero(a == UNASSIGNED)
        warm = np.flatnonzero(a != UNASSIGNED)

        # Clause 1: the bound sits inside the safe radius of the assigned centroid.
        keep = u[warm] * (1.0 + BOUND_PAD) < self.s[a[warm]]
        ctr.prune_c1 += int(keep.sum())
        active = warm[~keep]

        parts_ids, parts_rows, parts_new, parts_dist = [], [], [], []
        if cold.size:
            ids, rows, new, dist = self._cold(start, count, C, fetch, ctr, cold)
            self._store_cold(start, cold, dist)
            d_new = dist[np.arange(cold.size), new]
            a[cold] = new
            u[cold] = d_new
            parts_ids.append(ids)
            parts_rows.append(rows)
            parts_new.append(new)
            parts_dist.append(d_new)
        if active.size:
            ids = start + active
            rows = fetch(ids)
            cur_a, cur_u = self._scan(rows, ids, a[active], u[active], C, ctr)
            a[active] = cur_a
            u[active] = cur_u
            parts_ids.append(ids)
            parts_rows.append(rows)
            parts_new.append(cur_a)
            parts_dist.append(cur_u)
        if not parts_ids:
            empty = np.empty(0, dtype=np.int64)
            return BlockResult(empty, np.empty((0, C.current.shape[1])),
                               empty.astype(np.int32), empty.astype(np.int32), np.empty(0))
        ids = np.concatenate(parts_ids)
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        rows = np.concatenate(parts_rows)[order]
        new = np.concatenate(parts_new)[order]
        dist = np.concatenate(parts_dist)[order]
        return BlockResult(ids, rows, old[ids - start], new, dist)

    def _store_cold(self, start, local_ids, dist) -> None:
        pass

    def _lower(self, ids, c):
        return None

    def _set_lower(self, ids, c, values) -> None:
        pass

    def _scan(self, rows, ids, a0, u_loose, C, ctr):
        cents = C.current
        # Tighten once: exact distance to the currently assigned centroid.
        cur_u = row_distances(rows, cents[a0])
        ctr.dist_comps += ids.size
        self._set_lower(ids, a0, cur_u)
        cur_a = a0.copy()
        loose = u_loose * (1.0 + BOUND_PAD)
        for c in range(self.k):
            other = cur_a != c
            bound = 0.5 * self.cdist[cur_a, c]
            low = self._lower(ids, c)
            if low is not None:
                bound = np.maximum(bound, low * (1.0 - BOUND_PAD))
            skip = _skip(cur_u, bound, c, cur_a) & other
            if skip.any():
                loose_bound = 0.5 * self.cdist[a0, c]
                if low is not None:
                    loose_bound = np.maximum(loose_bound, low * (1.0 - BOUND_PAD))
                by_loose = skip & (loose < loose_bound)
                n2 = int(by_loose.sum())
                ctr.prune_c2 += n2
                ctr.prune_c3 += int(skip.sum()) - n2
            need = np.flatnonzero(other & ~skip)
            if need.size == 0:
                continue
            dc = point_distances(rows[need], cents[c])
            ctr.dist_comps += need.size
            self._set_lower(ids[need], c, dc)
            cu = cur_u[need]
            better = (dc < cu) | ((dc == cu) & (c < cur_a[need]))
            win = need[better]
            cur_a[win] = c
            cur_u[win] = dc[better]
        return cur_a, cur_u

    def nbytes(self) -> int:
        return self.assign.nbytes + self.u.nbytes + self.cdist.nbytes + self.s.nbytes


class TiState(MtiState):
    """Elkan's bounds: MTI plus one lower bound per (point, centroid)."""

    kind = "ti"

    def __init__(self, n: int, k: int):
        super().__init__(n, k)
        self.lower = np.zeros((n, k))

    def begin_block(self, start: int, count: int, drift) -> None:
        super().begin_block(start, count, drift)
        lo = self.lower[start:start + count]
        lo -= self.drift
        np.maximum(lo, 0.0, out=lo)

    def invalidate(self, rows) -> None:
        super().invalidate(rows)

    def _store_cold(self, start, local_ids, dist) -> None:
        self.lower[start + local_ids] = dist

    def _lower(self, ids, c):
        return self.lower[ids, c]

    def _set_lower(self, ids, c, values) -> None:
        self.lower[ids, c] = values

    def nbytes(self) -> int:
        return super().nbytes() + self.lower.nbytes


PRUNE_STATES = {"none": NoPruneState, "mti": MtiState, "ti": TiState}


def make_prune_state(kind: str, n: int, k: int):
    try:
        return PRUNE_STATES[kind](n, k)
    except KeyError:
        raise ValueError(f"unknown prune mode {kind!r}; expected one of {sorted(PRUNE_STATES)}")


def inflate_bounds(state: MtiState, drift) -> np.ndarray:
    """u[i] += drift[assign[i]] for every assigned point."""
    drift = np.asarray(drift, dtype=np.float64)
    live = state.assign != UNASSIGNED
    state.u[live] += drift[state.assign[live]]
    if isinstance(state, TiState):
        state.lower -= drift
        np.maximum(state.lower, 0.0, out=state.lower)
    return state.u


def assign_point_mti(v, i: int, state: MtiState, C: CentroidSet,
                     counters: Counters | None = None) -> tuple[int, str]:
    """Single-point MTI assignment; returns (cluster, outcome).

    ``outcome`` is ``"clause1"`` when the point kept its cluster without any
    distance computation, otherwise ``"scanned"``.
    """
    ctr = counters if counters is not None else Counters()
    v = np.asarray(v, dtype=np.float64)
    a = int(state.assign[i])
    if a == UNASSIGNED:
        dists = point_distances(C.current, v)
        ctr.dist_comps += dists.size
        best = int(np.argmin(dists))
        state.assign[i] = best
        state.u[i] = dists[best]
        if isinstance(state, TiState):
            state.lower[i] = dists
        return best, "scanned"
    if state.u[i] * (1.0 + BOUND_PAD) < state.s[a]:
        ctr.prune_c1 += 1
        return a, "clause1"
    ids = np.array([i])
    cur_a, cur_u = state._scan(v[None, :], ids, np.array([a], dtype=np.int32),
                               np.array([state.u[i]]), C, ctr)
    state.assign[i] = cur_a[0]
    state.u[i] = cur_u[0]
    return int(cur_a[0]), "scanned"


def assign_point_ti(v, i: int, state: TiState, C: CentroidSet,
                    counters: Counters | None = None) -> tuple[int, Counters]:
    ctr = counters if counters is not None else Counters()
    best, _ = assign_point_mti(v, i, state, C, ctr)
    return best, ctr


def measure_aux_memory(state) -> int:
    """Bytes held by the bound state (the data matrix is not included)."""
    return int(state.nbytes())


def aux_memory_formula(kind: str, n: int, k: int, d: int, T: int) -> int:
    """Closed-form bytes for a bound state plus T per-thread accumulators."""
    per_thread = T * (k * d * 8 + k * 4)
    base = n * 4
    if kind == "none":
        return base + per_thread
    mti = base + n * 8 + k * k * 8 + k * 8
    if kind == "mti":
        return mti + per_thread
    if kind == "ti":
        return mti + n * k * 8 + per_thread
    raise ValueError(kind)
