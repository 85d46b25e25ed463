from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcluster.algorithms import InitSpec, kmeans
from mmcluster.core import CentroidSet, MixtureSpec, generate_mixture
from mmcluster.engine import EngineConfig
from mmcluster.pruning import (Counters, MtiState, TiState, assign_point_mti, assign_point_ti,
                               aux_memory_formula, inflate_bounds, make_prune_state,
                               measure_aux_memory, update_centroid_geometry)
from oracles import argmin_oracle, scalar_dist


def test_geometry_examples():
    cdist, s = update_centroid_geometry(np.array([[0.0, 0.0], [4.0, 0.0]]))
    assert cdist.tolist() == [[0.0, 4.0], [4.0, 0.0]]
    assert s.tolist() == [2.0, 2.0]
    _, s1 = update_centroid_geometry(np.array([[1.0, 2.0]]))
    assert s1[0] == math.inf


@given(st.integers(0, 10_000))
def test_geometry_matches_brute_force(seed):
    C = np.random.default_rng(seed).normal(size=(3, 4))
    cdist, s = update_centroid_geometry(C)
    assert np.array_equal(cdist, cdist.T) and (np.diag(cdist) == 0).all()
    for a in range(3):
        others = [scalar_dist(C[a], C[b]) for b in range(3) if b != a]
        assert s[a] == pytest.approx(0.5 * min(others), rel=1e-14)


def test_inflate_bounds_examples():
    st_ = MtiState(2, 2)
    st_.assign[:] = [0, 1]
    st_.u[:] = [1.0, 2.0]
    inflate_bounds(st_, [0.5, 0.0])
    assert st_.u.tolist() == [1.5, 2.0]
    inflate_bounds(st_, [0.0, 0.0])
    assert st_.u.tolist() == [1.5, 2.0]


def _primed(kind, v, cents, a, u):
    state = make_prune_state(kind, 1, len(cents))
    C = CentroidSet(np.array(cents, dtype=float))
    state.on_new_centroids(C, C.drift)
    state.assign[0] = a
    state.u[0] = u
    return state, C


def test_clause1_example_needs_no_distances():
    state, C = _primed("mti", None, [[0.0, 1.0], [0.0, 10.0]], 0, 1.0)
    ctr = Counters()
    best, outcome = assign_point_mti(np.zeros(2), 0, state, C, ctr)
    assert (best, outcome) == (0, "clause1")
    assert ctr.dist_comps == 0 and ctr.prune_c1 == 1


def test_single_centroid_always_clause1():
    state, C = _primed("mti", None, [[5.0, 5.0]], 0, 1e9)
    assert assign_point_mti(np.zeros(2), 0, state, C)[1] == "clause1"


def test_ti_cold_start_fills_lower_row():
    state = TiState(1, 3)
    C = CentroidSet(np.array([[0.0], [2.0], [5.0]]))
    state.on_new_centroids(C, C.drift)
    ctr = Counters()
    best, _ = assign_point_ti(np.array([1.5]), 0, state, C, ctr)
    assert best == 1 and ctr.dist_comps == 3
    assert state.lower[0].tolist() == [1.5, 0.5, 3.5]


def _drive(kind, X, C0, iters):
    """Manual Lloyd loop around a bound state; yields per-iteration facts."""
    n, k = len(X), len(C0)
    state = make_prune_state(kind, n, k)
    C = CentroidSet(np.array(C0, dtype=float))
    state.on_new_centroids(C, C.drift)
    for _ in range(iters):
        state.begin_block(0, n, C.drift)
        live = state.assign >= 0
        true_d = np.sqrt(((X - C.current[np.maximum(state.assign, 0)]) ** 2).sum(axis=1))
        if live.any():
            assert (state.u[live] >= true_d[live] * (1 - 1e-12)).all()
        if kind == "ti" and live.any():
            full = np.sqrt(((X[:, None] - C.current[None]) ** 2).sum(axis=2))
            assert (state.lower[live] <= full[live] * (1 + 1e-12)).all()
        ctr = Counters()
        state.assign_block(0, n, C, lambda ids: X[ids], ctr)
        yield state.assign.copy(), ctr, C.current.copy()
        new = C.current.copy()
        for c in range(k):
            if (state.assign == c).any():
                new[c] = X[state.assign == c].mean(axis=0)
        C.advance(new)
        state.on_new_centroids(C, C.drift)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["mti", "ti"]))
def test_bounded_assignment_is_exact_and_sound(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 3)) + rng.integers(0, 4, size=(200, 1)) * 3.0
    C0 = X[rng.choice(200, 8, replace=False)]
    for assign, ctr, cents in _drive(kind, X, C0, 6):
        assert np.array_equal(assign, argmin_oracle(X, cents))
        assert ctr.dist_comps <= 200 * 8


def test_ti_never_computes_more_than_mti():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 2)) + rng.integers(0, 6, size=(400, 1)) * 4.0
    C0 = X[:10]
    mti = list(_drive("mti", X, C0, 8))
    ti = list(_drive("ti", X, C0, 8))
    for (am, cm, _), (at, ct, _) in zip(mti, ti):
        assert np.array_equal(am, at)
        assert ct.dist_comps <= cm.dist_comps


def test_lossless_across_prune_modes():
    m, _ = generate_mixture(MixtureSpec(3000, 4, 8, 2.0, seed=6))
    runs = {p: kmeans(m, 8, InitSpec("forgy", 1), EngineConfig(max_iters=12), prune=p)
            for p in ("none", "mti", "ti")}
    ref = runs["none"]
    for p in ("mti", "ti"):
        assert np.array_equal(runs[p].assign, ref.assign)
        assert runs[p].centroids.current.tobytes() == ref.centroids.current.tobytes()
    assert ref.metrics[-1].dist_comps == 3000 * 8
    assert runs["ti"].metrics[-1].dist_comps <= runs["mti"].metrics[-1].dist_comps


def test_memory_examples():
    small = measure_aux_memory(MtiState(1000, 10))
    big = measure_aux_memory(MtiState(1000, 100))
    assert big - small <= (100**2 - 10**2) * 8 + 90 * 8 * 8
    assert measure_aux_memory(TiState(1000, 100)) >= 1000 * 100 * 8
    ratio = aux_memory_formula("mti", 10**5, 100, 8, 8) / aux_memory_formula("ti", 10**5, 100, 8, 8)
    assert ratio <= 0.2


@pytest.mark.parametrize("kind", ["none", "mti", "ti"])
def test_measured_state_matches_formula(kind):
    n, k = 777, 13
    measured = measure_aux_memory(make_prune_state(kind, n, k))
    assert measured == aux_memory_formula(kind, n, k, 5, 0)
