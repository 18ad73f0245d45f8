import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pdmnet import spectral
from pdmnet.errors import PartitioningFailure
from pdmnet.spectral import (
    CorrelationMatrix,
    GENullConfig,
    KMeansConfig,
    LaplacianSpectrum,
    LevelStack,
    Partition,
    build_levels,
    chordal_distance,
    correlation,
    count_significant,
    ge_threshold,
    kmeans,
    laplacian,
    spectral_kmeans,
)
from pdmnet.synthetic import block_panel, hierarchical_panel


def spectrum(eigenvalues, tol=1e-12):
    w = np.asarray(eigenvalues, float)
    return LaplacianSpectrum(w, np.eye(len(w)), tol, np.diag(w), np.ones(len(w)))


# --- correlation and distance


def test_correlation_identical_rows():
    rho = correlation(np.array([[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]])).rho
    np.testing.assert_array_equal(rho, np.ones((2, 2)))


def test_correlation_negation():
    x = np.array([0.3, -1.0, 2.0, 0.5])
    assert correlation(np.vstack([x, -x])).rho[0, 1] == pytest.approx(-1.0, abs=1e-15)


def test_correlation_hand_value():
    rho = correlation(np.array([[1.0, 2.0, 3.0], [1.0, 3.0, 2.0]])).rho
    assert oracles.pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)
    assert rho[0, 1] == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_correlation_matches_oracle(seed):
    X = np.random.default_rng(seed).normal(size=(4, 12))
    rho = correlation(X).rho
    for i in range(4):
        for j in range(4):
            assert rho[i, j] == pytest.approx(oracles.pearson(X[i], X[j]), abs=1e-13)


@pytest.mark.parametrize("r, d", [(1.0, 0.0), (-1.0, 1.0), (0.0, math.sqrt(2) / 2)])
def test_chordal_distance_values(r, d):
    assert chordal_distance(np.array(r)) == pytest.approx(d, abs=1e-12)
    assert chordal_distance(np.array(r)) == pytest.approx(math.sin(math.acos(r) / 2), abs=1e-12)


def test_chordal_distance_monotone():
    r = np.linspace(-1, 1, 2001)
    assert np.all(np.diff(chordal_distance(r)) < 0)


# --- laplacian


def test_laplacian_two_identical():
    spec = laplacian(CorrelationMatrix(["a", "b"], np.ones((2, 2))))
    np.testing.assert_allclose(spec.matrix, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(spec.eigenvalues, [0, 1], atol=1e-15)


@pytest.mark.parametrize("K", [2, 3, 7])
def test_laplacian_identical_series(K):
    spec = laplacian(CorrelationMatrix([str(i) for i in range(K)], np.ones((K, K))))
    oracle = np.linalg.eigvalsh(np.eye(K) - np.ones((K, K)) / K)
    np.testing.assert_allclose(spec.eigenvalues, oracle, atol=1e-12)
    np.testing.assert_allclose(spec.eigenvalues, [0] + [1] * (K - 1), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_laplacian_invariants(n, seed):
    X = np.random.default_rng(seed).normal(size=(n, 3 * n))
    rho = correlation(X)
    spec = laplacian(rho)
    np.testing.assert_allclose(spec.matrix, oracles.laplacian_dense(rho.rho.tolist()), atol=1e-13)
    assert spec.eigenvalues.min() >= -1e-10 and spec.eigenvalues.max() <= 2 + 1e-10
    assert spec.eigenvalues.min() <= 1e-10
    V = spec.eigenvectors
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-8)
    kernel = np.sqrt(spec.degrees)
    assert np.abs(spec.matrix @ kernel).max() < 1e-8


# --- GE null


def test_ge_threshold_above_tolerance_and_reproducible():
    cfg = GENullConfig(num_sims=10, seed=3)
    a = ge_threshold(15, 60, cfg)
    spectral._GE_MEMO.clear()
    b = ge_threshold(15, 60, cfg)
    assert a == b
    assert a > cfg.zero_tolerance


def test_ge_threshold_independent_of_workers():
    spectral._GE_MEMO.clear()
    a = ge_threshold(12, 40, GENullConfig(num_sims=8, seed=1, workers=1))
    spectral._GE_MEMO.clear()
    b = ge_threshold(12, 40, GENullConfig(num_sims=8, seed=1, workers=3))
    assert a == b


def test_ge_threshold_long_series_limit():
    # with m >> n the correlations vanish and the gap tends to a closed form
    limit = oracles.ge_limit(10)
    value = ge_threshold(10, 10000, GENullConfig(seed=0))
    assert value < limit < 1
    assert value == pytest.approx(limit, abs=0.01)
    # frozen simulation value (seed 0, 100 draws)
    assert value == pytest.approx(0.9354514818274284, abs=1e-12)


def test_ge_threshold_seed_matters():
    a = ge_threshold(20, 100, GENullConfig(num_sims=10, seed=0))
    b = ge_threshold(20, 100, GENullConfig(num_sims=10, seed=1))
    assert a != b
    assert a == pytest.approx(0.946183187745241, abs=1e-12)


# --- count_significant


def test_count_significant_examples():
    assert count_significant(spectrum([0, 0.1, 0.2, 1.0]), 0.5) == 2
    assert count_significant(spectrum([0, 0.6, 0.9]), 0.5) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=2, max_size=20), st.floats(0.01, 2), st.floats(0.01, 2))
def test_count_significant_monotone(w, a, b):
    spec = spectrum(sorted(w))
    lo, hi = sorted((a, b))
    assert count_significant(spec, lo) <= count_significant(spec, hi)


def test_planted_four_blocks_significant():
    panel, _ = block_panel([20] * 4, 500, 0.6, seed=2)
    spec = laplacian(correlation(panel))
    assert count_significant(spec, ge_threshold(80, 500)) >= 3


# --- k-means and spectral clustering


def test_kmeans_two_separated_blocks():
    base = np.random.default_rng(0).normal(size=(2, 50))
    X = np.vstack([np.repeat(base[:1], 5, axis=0), np.repeat(base[1:], 7, axis=0)])
    part = spectral_kmeans(laplacian(correlation(X)), 2)
    np.testing.assert_array_equal(part.assignment, [0] * 5 + [1] * 7)


def test_kmeans_k_equals_n():
    X = np.random.default_rng(1).normal(size=(6, 3))
    labels, wcss = kmeans(X, 6)
    assert sorted(labels.tolist()) == list(range(6))
    assert wcss == 0


def test_spectral_kmeans_deterministic_and_surjective():
    panel, _ = block_panel([10, 10, 10], 200, 0.4, seed=5)
    spec = laplacian(correlation(panel))
    a = spectral_kmeans(spec, 3, seed=9)
    b = spectral_kmeans(spec, 3, seed=9)
    assert a == b
    assert set(a.assignment.tolist()) == {0, 1, 2}


def test_spectral_kmeans_permutation_invariant():
    panel, truth = block_panel([8, 12, 10], 300, 0.5, seed=6)
    perm = np.random.default_rng(0).permutation(30)
    a = spectral_kmeans(laplacian(correlation(panel.values)), 3)
    b = spectral_kmeans(laplacian(correlation(panel.values[perm])), 3)
    assert Partition(a.assignment[perm]).canonical() == b


def test_spectral_kmeans_rejects_bad_k():
    spec = laplacian(correlation(np.random.default_rng(0).normal(size=(4, 10))))
    with pytest.raises(ValueError):
        spectral_kmeans(spec, 1)


# --- Partition


def test_partition_canonical_labels():
    p = Partition([2, 2, 0, 1, 0]).canonical()
    assert p.assignment.tolist() == [0, 0, 1, 2, 1]


def test_partition_requires_surjection():
    with pytest.raises(ValueError):
        Partition([0, 2, 2], K=3)


def test_partition_compose_and_refine():
    fine = Partition([0, 0, 1, 2, 3])
    coarse_of_fine = Partition([0, 0, 1, 1])
    entity = fine.compose(coarse_of_fine)
    assert entity.assignment.tolist() == [0, 0, 0, 1, 1]
    assert fine.refines(entity)
    assert not entity.refines(fine)


# --- build_levels


def test_build_levels_noise_fails():
    panel, _ = block_panel([100], 500, 0.0, seed=11)
    with pytest.raises(PartitioningFailure) as info:
        build_levels(panel)
    assert info.value.count < 2


def test_build_levels_hierarchical():
    panel, fine, coarse = hierarchical_panel(2, 3, 12, 600, 0.3, 0.35, seed=4)
    stack = build_levels(panel, GENullConfig(seed=0), KMeansConfig(seed=0))
    assert stack.sizes()[:2] == [6, 2]
    assert stack[0].partition == Partition(fine).canonical()
    assert stack[1].partition == Partition(coarse).canonical()
    for a, b in zip(stack.levels, stack.levels[1:]):
        assert a.partition.refines(b.partition)
        assert b.partition.K < a.partition.K


def test_build_levels_two_cluster_top():
    panel, labels = block_panel([15, 15, 15], 400, 0.5, seed=8)
    stack = build_levels(panel)
    assert stack.sizes() == [3]
    assert stack[0].partition == Partition(labels)


def test_level_stack_round_trip():
    panel, _, _ = hierarchical_panel(2, 2, 10, 400, 0.3, 0.35, seed=1)
    stack = build_levels(panel)
    back = LevelStack.from_dict(stack.to_dict())
    assert back.sizes() == stack.sizes()
    assert all(a.partition == b.partition for a, b in zip(back.levels, stack.levels))
