from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcluster.algorithms import (BatchSpec, InitSpec, fcm_memberships, fcmeans, final_sse,
                                  gradient_step, init_centroids, kmeans, kmeanspp_multirun,
                                  kmedoids_clara, learning_rate, mbkmeans,
                                  plusplus_probabilities, run_seed, skmeans, swap_search)
from mmcluster.core import (CentroidSet, DomainError, MixtureSpec, UsageError, generate_mixture,
                            unit_rows)
from mmcluster.engine import EngineConfig
from oracles import cosine_argmax_oracle, exhaustive_medoids, lloyd_oracle


def test_plusplus_probabilities_example():
    assert plusplus_probabilities([1, 1, 2]).tolist() == [0.25, 0.25, 0.5]


def test_forgy_k_equals_n_is_permutation():
    X = np.arange(10.0).reshape(5, 2)
    C = init_centroids(X, 5, InitSpec("forgy", 4)).current
    assert sorted(map(tuple, C)) == sorted(map(tuple, X))


def test_plusplus_skips_duplicates():
    X = np.array([[0.0], [0.0], [0.0], [5.0]])
    for seed in range(20):
        C = init_centroids(X, 2, InitSpec("plusplus", seed)).current
        assert sorted(C[:, 0].tolist()) == [0.0, 5.0]


def test_random_assign_init_and_bad_k():
    X = np.random.default_rng(0).normal(size=(50, 2))
    assert init_centroids(X, 3, InitSpec("random", 1)).k == 3
    with pytest.raises(UsageError):
        init_centroids(X, 51, InitSpec("forgy"))
    with pytest.raises(UsageError):
        InitSpec("bogus")


def test_kmeans_closed_form():
    X = np.array([[0.0], [1.0], [9.0], [10.0]])
    res = kmeans(X, 2, CentroidSet(np.array([[0.0], [9.0]])), prune="mti")
    assert sorted(res.centroids.current[:, 0].tolist()) == [0.5, 9.5]
    assert final_sse(X, res) == 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kmeans_sse_non_increasing(seed):
    m, _ = generate_mixture(MixtureSpec(600, 3, 5, 1.5, seed=seed % 1000))
    res = kmeans(m, 6, InitSpec("forgy", seed), EngineConfig(max_iters=15), track_objective=True)
    obj = [r.objective for r in res.metrics]
    assert all(b <= a + 1e-9 for a, b in zip(obj, obj[1:]))


def test_kmeans_matches_lloyd_oracle():
    m, _ = generate_mixture(MixtureSpec(500, 2, 4, 6.0, seed=12))
    C0 = init_centroids(m, 4, InitSpec("forgy", 2))
    res = kmeans(m, 4, C0, EngineConfig(max_iters=5, convergence="iterations"))
    traj = lloyd_oracle(m.values, C0.current, 5)
    assert np.array_equal(res.assign, traj[-1][0])
    np.testing.assert_allclose(res.centroids.current, traj[-1][1], rtol=1e-12)


def test_skmeans_examples():
    res = skmeans(np.array([[2.0, 0.0], [0.0, 3.0]]), 2, CentroidSet(np.array([[1.0, 0.1], [0.1, 1.0]])))
    np.testing.assert_allclose(res.centroids.current, [[1.0, 0.0], [0.0, 1.0]])
    ray = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    res = skmeans(ray, 1, InitSpec("forgy", 0))
    np.testing.assert_allclose(res.centroids.current[0], np.array([1.0, 2.0]) / math.sqrt(5))
    with pytest.raises(DomainError):
        skmeans(np.array([[0.0, 0.0], [1.0, 0.0]]), 1)


def test_skmeans_matches_cosine_oracle():
    X = unit_rows(np.random.default_rng(5).normal(size=(1000, 5)))
    res = skmeans(X, 6, InitSpec("forgy", 3), EngineConfig(max_iters=8))
    assert np.array_equal(res.assign, cosine_argmax_oracle(X, res.centroids.previous))


def test_kmeanspp_single_run_identity():
    m, _ = generate_mixture(MixtureSpec(800, 3, 4, 4.0, seed=2))
    cfg = EngineConfig(max_iters=20)
    one = kmeanspp_multirun(m, 4, 1, cfg, seed=7)
    direct = kmeans(m, 4, InitSpec("plusplus", run_seed(7, 0)), cfg)
    assert np.array_equal(one.assign, direct.assign)


def test_kmeanspp_best_of_runs():
    m, _ = generate_mixture(MixtureSpec(800, 3, 4, 1.0, seed=3))
    cfg = EngineConfig(max_iters=20)
    many = kmeanspp_multirun(m, 4, 10, cfg, seed=1)
    assert many.extra["best_sse"] == min(many.extra["run_sse"])
    assert many.extra["best_sse"] <= kmeanspp_multirun(m, 4, 1, cfg, seed=1).extra["best_sse"]


def test_minibatch_update_example():
    assert gradient_step([1.0, 0.0], [3.0, 2.0], learning_rate(2)).tolist() == [2.0, 1.0]
    with pytest.raises(UsageError):
        BatchSpec(0.0)
    with pytest.raises(UsageError):
        BatchSpec(1.5)


def test_minibatch_is_sequential_running_mean():
    # With eta = 1/count, each centroid ends at the mean of every row it absorbed.
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 2)) + np.repeat([[0, 0], [20, 0]], 20, axis=0)
    C0 = CentroidSet(np.array([[0.0, 0.0], [20.0, 0.0]]))
    res = mbkmeans(X, 2, 1.0, C0, EngineConfig(max_iters=1))
    c = C0.current.copy()
    counts = [0, 0]
    for v in X[np.sort(np.random.default_rng([0, 1, 1]).permutation(40))]:
        a = int(np.argmin(((c - v) ** 2).sum(axis=1)))
        counts[a] += 1
        c[a] = gradient_step(c[a], v, learning_rate(counts[a]))
    np.testing.assert_allclose(res.centroids.current, c, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("z", [1.5, 2.0, 3.0])
def test_fcm_membership_examples(z):
    assert fcm_memberships([[1.0, 1.0]], z).tolist() == [[0.5, 0.5]]
    assert fcm_memberships([[0.0, 2.0, 3.0]], z).tolist() == [[1.0, 0.0, 0.0]]
    with pytest.raises(UsageError):
        fcm_memberships([[1.0]], 1.0)


@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=6), st.floats(1.1, 4.0))
def test_fcm_membership_rows_are_distributions(dist, z):
    u = fcm_memberships([dist], z)[0]
    assert abs(u.sum() - 1) <= 1e-9 and (u >= 0).all() and (u <= 1).all()
    # direct formula
    p = 2 / (z - 1)
    for c, dc in enumerate(dist):
        expect = 1 / sum((dc / dj) ** p for dj in dist)
        assert u[c] == pytest.approx(expect, rel=1e-9, abs=1e-300)


def test_fcm_objective_non_increasing():
    m, _ = generate_mixture(MixtureSpec(1000, 3, 4, 3.0, seed=7))
    res = fcmeans(m, 4, 2.0, InitSpec("forgy", 5),
                  EngineConfig(max_iters=30, scheduler="static", convergence="drift", tol=1e-9))
    J = res.extra["J"]
    assert all(b <= a + 1e-7 * abs(a) for a, b in zip(J, J[1:]))
    U = res.extra["memberships"]
    assert np.abs(U.sum(axis=1) - 1).max() <= 1e-9
    assert set(res.trace.barriers) == {2}


def test_clara_matches_exhaustive_pairs():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 6])
    res = kmedoids_clara(X, 2, 100, 3)
    cost, _ = exhaustive_medoids(X, 2)
    assert res.objective == pytest.approx(cost, rel=1e-12)


def test_clara_k_equals_n_and_monotone_history():
    X = np.random.default_rng(0).normal(size=(6, 2))
    res = kmedoids_clara(X, 6, 100, 2)
    assert res.objective == 0.0 and sorted(res.extra["medoids"].tolist()) == list(range(6))
    m, _ = generate_mixture(MixtureSpec(2000, 2, 5, 4.0, seed=1))
    res = kmedoids_clara(m, 5, 5, 6, EngineConfig(tol=-0.0))
    best = np.minimum.accumulate(res.extra["cost_history"])
    assert [r.objective for r in res.metrics] == best.tolist()
    with pytest.raises(UsageError):
        kmedoids_clara(X, 3, 10, 1)


def test_swap_search_reaches_local_optimum():
    X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0]])
    D = np.abs(X - X.T)
    med, cost = swap_search(D, [0, 1])
    assert sorted(med) == [1, 3] and cost == 3.0
