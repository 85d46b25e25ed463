"""Domain types, dissimilarity kernels, matrix I/O and synthetic mixtures."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNASSIGNED = -1
FLOAT = np.dtype("<f8")


class UsageError(ValueError):
    """Invalid arguments or configuration."""


class FormatError(ValueError):
    """A matrix file does not match the declared shape."""


class DataError(ValueError):
    """Matrix contents are not usable (NaN / inf)."""


class DomainError(ValueError):
    """Input outside the domain of a dissimilarity (e.g. zero-norm vector)."""


def even_partitions(n: int, parts: int) -> list[tuple[int, int, int]]:
    """Split ``[0, n)`` into ``parts`` contiguous ranges as (start, count, pid)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    parts = max(1, min(int(parts), n))
    base, extra = divmod(n, parts)
    out = []
    start = 0
    for pid in range(parts):
        count = base + (1 if pid < extra else 0)
        out.append((start, count, pid))
        start += count
    return out


@dataclass
class DataMatrix:
    values: np.ndarray
    partition_map: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise UsageError(f"matrix must be 2-D with n, d >= 1, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise DataError("matrix contains NaN or infinite values")
        v.flags.writeable = False
        self.values = v
        if not self.partition_map:
            self.partition_map = even_partitions(v.shape[0], 1)
        _check_partition_map(self.partition_map, v.shape[0])

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def repartition(self, parts: int) -> "DataMatrix":
        return DataMatrix(self.values, even_partitions(self.n, parts))

    def checksum(self) -> str:
        return hashlib.sha256(self.values.astype(FLOAT, copy=False).tobytes()).hexdigest()


def _check_partition_map(pmap, n):
    pos = 0
    for start, count, _ in pmap:
        if start != pos or count < 1:
            raise UsageError("partition map must be contiguous, sorted and non-empty")
        pos += count
    if pos != n:
        raise UsageError("partition map must cover [0, n)")


@dataclass
class CentroidSet:
    current: np.ndarray
    previous: np.ndarray | None = None
    counts: np.ndarray | None = None
    drift: np.ndarray | None = None

    def __post_init__(self):
        self.current = np.array(self.current, dtype=np.float64, ndmin=2)
        k = self.current.shape[0]
        if self.previous is None:
            self.previous = self.current.copy()
        if self.counts is None:
            self.counts = np.zeros(k, dtype=np.int64)
        if self.drift is None:
            self.drift = np.zeros(k)

    @property
    def k(self) -> int:
        return self.current.shape[0]

    def advance(self, new: np.ndarray) -> None:
        """Install ``new`` as current, keeping the old ones and per-centroid drift."""
        self.previous = self.current
        self.current = np.array(new, dtype=np.float64)
        self.drift = row_distances(self.current, self.previous)

    def copy(self) -> "CentroidSet":
        return CentroidSet(self.current.copy(), self.previous.copy(),
                           self.counts.copy(), self.drift.copy())


@dataclass(frozen=True)
class MixtureSpec:
    n: int
    d: int
    true_k: int
    separation: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.true_k < 1:
            raise UsageError("n, d and true_k must be >= 1")
        if self.true_k > self.n:
            raise UsageError("true_k must not exceed n")
        if not self.separation > 0:
            raise UsageError("separation must be positive")


# -- dissimilarities -------------------------------------------------------

def euclidean(v, c) -> float:
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if v.shape != c.shape:
        raise UsageError(f"dimension mismatch: {v.shape} vs {c.shape}")
    return float(math.sqrt(float(np.sum((v - c) ** 2))))


def cosine_dissimilarity(v, c) -> float:
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if v.shape != c.shape:
        raise UsageError(f"dimension mismatch: {v.shape} vs {c.shape}")
    nv, nc = np.linalg.norm(v), np.linalg.norm(c)
    if nv == 0 or nc == 0:
        raise DomainError("cosine dissimilarity undefined for zero-norm vectors")
    sim = float(np.dot(v, c) / (nv * nc))
    return 1.0 - min(1.0, max(-1.0, sim))


def point_distances(rows: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Euclidean distance from every row of ``rows`` to the single vector ``c``.

    Every kernel in the package computes point-centroid distances through this
    function. It accumulates one column at a time, so the result for a row
    depends only on that row's values, never on how many rows are batched.
    That is what lets pruned and unpruned runs agree bit for bit.
    """
    acc = np.zeros(rows.shape[0])
    for j in range(rows.shape[1]):
        diff = rows[:, j] - c[j]
        acc += diff * diff
    return np.sqrt(acc, out=acc)


def row_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances between paired rows of two equally shaped matrices."""
    acc = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        diff = a[:, j] - b[:, j]
        acc += diff * diff
    return np.sqrt(acc, out=acc)


def all_distances(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(m, k) distance table built column by column from :func:`point_distances`."""
    out = np.empty((rows.shape[0], centroids.shape[0]))
    for c in range(centroids.shape[0]):
        out[:, c] = point_distances(rows, centroids[c])
    return out


def nearest(rows: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive argmin (ties to the lowest index) and the winning distance."""
    dist = all_distances(rows, centroids)
    a = np.argmin(dist, axis=1)
    return a, dist[np.arange(rows.shape[0]), a]


def sse(m: DataMatrix | np.ndarray, centroids, assign) -> float:
    values = m.values if isinstance(m, DataMatrix) else np.asarray(m, dtype=np.float64)
    cents = centroids.current if isinstance(centroids, CentroidSet) else np.asarray(centroids)
    a = np.asarray(assign)
    if a.shape[0] != values.shape[0] or (a < 0).any() or (a >= cents.shape[0]).any():
        raise UsageError("assignment must be complete and within [0, k)")
    diff = values - cents[a]
    return math.fsum(np.einsum("ij,ij->i", diff, diff))


def normalize_rows(m: DataMatrix | np.ndarray) -> DataMatrix:
    values = m.values if isinstance(m, DataMatrix) else np.asarray(m, dtype=np.float64)
    pmap = m.partition_map if isinstance(m, DataMatrix) else []
    return DataMatrix(unit_rows(values), list(pmap))


def unit_rows(values: np.ndarray) -> np.ndarray:
    norms = point_distances(values, np.zeros(values.shape[1]))
    if (norms == 0).any():
        raise DomainError(f"row {int(np.argmax(norms == 0))} has zero norm")
    return values / norms[:, None]


# -- matrix files ----------------------------------------------------------

def save_matrix(path, values) -> None:
    arr = np.ascontiguousarray(values, dtype=FLOAT)
    Path(path).write_bytes(arr.tobytes())


def load_matrix(path, n: int, d: int, partitions: int = 1) -> DataMatrix:
    path = Path(path)
    if n < 1 or d < 1:
        raise UsageError("n and d must be >= 1")
    size = path.stat().st_size
    if size != n * d * FLOAT.itemsize:
        raise FormatError(f"{path}: expected {n * d * 8} bytes for {n}x{d}, found {size}")
    values = np.fromfile(path, dtype=FLOAT).reshape(n, d)
    return DataMatrix(values, even_partitions(n, partitions))


def load_csv(path, partitions: int = 1) -> DataMatrix:
    values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return DataMatrix(values, even_partitions(values.shape[0], partitions))


def csv_to_matrix(src, dst) -> tuple[int, int]:
    m = load_csv(src)
    save_matrix(dst, m.values)
    return m.n, m.d


# -- synthetic data --------------------------------------------------------

def mixture_centers(true_k: int, d: int, separation: float, rng) -> np.ndarray:
    """Centers with pairwise distance >= ``separation`` (unit within-cluster sd)."""
    if true_k == 1:
        return np.zeros((1, d))
    centers = np.zeros((true_k, d))
    # A box large enough that rejection sampling succeeds quickly even in 1-D.
    side = separation * true_k ** (1.0 / d) * 2.0
    placed = 0
    tries = 0
    while placed < true_k:
        cand = rng.uniform(0.0, side, size=d)
        if placed == 0 or np.min(point_distances(centers[:placed], cand)) >= separation:
            centers[placed] = cand
            placed += 1
        tries += 1
        if tries > 10000 * true_k:
            side *= 1.5
            tries = 0
    return centers


def generate_mixture(spec: MixtureSpec, partitions: int = 1) -> tuple[DataMatrix, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    centers = mixture_centers(spec.true_k, spec.d, spec.separation, rng)
    labels = np.arange(spec.n) % spec.true_k
    rng.shuffle(labels)
    values = centers[labels] + rng.standard_normal((spec.n, spec.d))
    return DataMatrix(values, even_partitions(spec.n, partitions)), labels.astype(np.int64)


def mixture_with_centers(spec: MixtureSpec) -> tuple[DataMatrix, np.ndarray, np.ndarray]:
    """Like :func:`generate_mixture` but also returns the generating centers."""
    rng = np.random.default_rng(spec.seed)
    centers = mixture_centers(spec.true_k, spec.d, spec.separation, rng)
    m, labels = generate_mixture(spec)
    return m, labels, centers
