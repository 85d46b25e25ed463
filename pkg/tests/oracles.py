"""Independent reference implementations used as test oracles.

Nothing here imports the package's numerics; everything is written with
plain loops or direct numpy so that agreement is meaningful.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def scalar_dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def scalar_sse(X, C, assign) -> float:
    return math.fsum(scalar_dist(X[i], C[assign[i]]) ** 2 for i in range(len(X)))


def argmin_oracle(X, C) -> np.ndarray:
    """Exhaustive nearest centroid, ties to the lowest index."""
    out = np.empty(len(X), dtype=np.int64)
    for i, x in enumerate(X):
        best, best_d = 0, math.inf
        for c, cen in enumerate(C):
            d = sum((float(p) - float(q)) ** 2 for p, q in zip(x, cen))
            if d < best_d:
                best, best_d = c, d
        out[i] = best
    return out


def lloyd_oracle(X, C0, iters):
    """Plain Lloyd's; returns per-iteration (assign, centroids_after, margin).

    ``margin`` is the smallest gap between the best and second-best squared
    distance over all points in that iteration.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.array(C0, dtype=np.float64)
    out = []
    for _ in range(iters):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        a = np.argmin(d2, axis=1)
        part = np.sort(d2, axis=1)
        margin = float((np.sqrt(part[:, 1]) - np.sqrt(part[:, 0])).min()) if C.shape[0] > 1 else math.inf
        newC = C.copy()
        for c in range(C.shape[0]):
            members = X[a == c]
            if len(members):
                newC[c] = members.mean(axis=0)
        out.append((a, newC, margin))
        C = newC
    return out


def cosine_argmax_oracle(X, C) -> np.ndarray:
    out = np.empty(len(X), dtype=np.int64)
    for i, x in enumerate(X):
        sims = [float(np.dot(x, c) / (np.linalg.norm(x) * np.linalg.norm(c))) for c in C]
        out[i] = int(np.argmax(sims))
    return out


def exhaustive_medoids(X, k):
    """Minimum total distance over every k-subset of rows as medoids."""
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    best = (math.inf, None)
    for combo in itertools.combinations(range(len(X)), k):
        cost = float(D[:, combo].min(axis=1).sum())
        if cost < best[0]:
            best = (cost, combo)
    return best


def gaussian_loglik_bic(X, labels):
    """BIC of a hard-partition spherical Gaussian fit, computed point by point."""
    X = np.asarray(X, dtype=np.float64)
    R, M = X.shape
    groups = sorted(set(labels.tolist()))
    sq = 0.0
    for g in groups:
        part = X[labels == g]
        mu = part.mean(axis=0)
        sq += float(((part - mu) ** 2).sum())
    var = sq / (R * M)
    ll = 0.0
    for g in groups:
        part = X[labels == g]
        mu = part.mean(axis=0)
        w = len(part) / R
        for x in part:
            r2 = float(((x - mu) ** 2).sum())
            ll += math.log(w) - 0.5 * M * math.log(2 * math.pi * var) - r2 / (2 * var)
    p = len(groups) * (M + 1)
    return ll - 0.5 * p * math.log(R)


def ad_oracle(x) -> float:
    """A^2 with estimated mean/variance, straight from the textbook sum."""
    from statistics import NormalDist

    x = sorted(float(v) for v in x)
    m = len(x)
    mu = sum(x) / m
    sd = math.sqrt(sum((v - mu) ** 2 for v in x) / (m - 1))
    z = [(v - mu) / sd for v in x]
    N = NormalDist()
    s = 0.0
    for j in range(1, m + 1):
        s += (2 * j - 1) * (math.log(N.cdf(z[j - 1])) + math.log(1 - N.cdf(z[m - j])))
    return -m - s / m


def margin_safe_mixture(make, init, iters, min_margin=1e-6, tries=50):
    """Draw datasets from ``make(seed)`` until the Lloyd trajectory from
    ``init(X)`` keeps every best-vs-second margin above ``min_margin``.
    """
    for seed in range(tries):
        X = make(seed)
        C0 = init(X)
        traj = lloyd_oracle(X, C0, iters)
        if all(m > min_margin for _, _, m in traj):
            return seed, X
    raise RuntimeError("no margin-safe dataset found")
