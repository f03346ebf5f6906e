import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from latentcf import metrics
import oracles

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_intensity_bins_edges():
    np.testing.assert_array_equal(metrics.intensity_bins([0.0, 0.019, 0.02, 0.999, 1.0], 50),
                                  [0, 0, 1, 49, 49])


def test_kernel_shape():
    k = metrics.gaussian_kernel(50, 0.05)
    assert len(k) == 2 * 10 + 1
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])
    assert k.argmax() == 10


def test_kernel_radius_capped():
    assert len(metrics.gaussian_kernel(4, 10.0)) == 7


def test_kde_single_black_pixel():
    kde = metrics.fit_kde(np.zeros((1, 1)), bins=50, bandwidth=0.05)
    row = kde.table[0]
    k = metrics.gaussian_kernel(50, 0.05)
    expected = np.zeros(50)
    expected[:11] = k[10:]
    np.testing.assert_allclose(row, expected / expected.sum())


def test_kde_constant_population_score():
    pop = np.full((5, 4), 0.5)
    kde = metrics.fit_kde(pop, bins=10, bandwidth=0.05)
    k = metrics.gaussian_kernel(10, 0.05)
    assert metrics.in_distribution_score(pop[0], kde) == pytest.approx(k.max())
    assert metrics.in_distribution_score(np.zeros(4), kde) == pytest.approx(0.0)


def test_kde_two_bins_huge_bandwidth_is_near_uniform():
    kde = metrics.fit_kde(np.array([[0.1], [0.2]]), bins=2, bandwidth=100.0)
    np.testing.assert_allclose(kde.table[0], [0.5, 0.5], atol=1e-4)


def test_kde_always_zero_pixel_peaks_at_zero():
    kde = metrics.fit_kde(np.zeros((7, 3)))
    row = kde.table[0]
    assert kde.pixel_probabilities(np.zeros(3))[0] == row.max()
    assert np.all(np.diff(row[:11]) < 0) and np.all(row[11:] == 0)


def test_kde_hand_picked_values_match_oracle():
    values = np.array([[0.0], [0.13], [0.5], [0.51], [1.0]])
    got = metrics.fit_kde(values, bins=10, bandwidth=0.05).table
    np.testing.assert_allclose(got, oracles.kde_table(values.tolist(), 10, 0.05), atol=1e-15)


def test_self_scoring_is_maximal():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=20)
    kde = metrics.fit_kde(x[None, :])
    best = metrics.in_distribution_score(x, kde)
    for _ in range(50):
        assert metrics.in_distribution_score(rng.uniform(size=20), kde) <= best


def test_score_permutation_invariance():
    rng = np.random.default_rng(5)
    pop = rng.uniform(size=(8, 12))
    x = rng.uniform(size=12)
    perm = rng.permutation(12)
    kde = metrics.fit_kde(pop)
    permuted = metrics.PixelKde(kde.table[perm], kde.bins, kde.bandwidth)
    assert metrics.in_distribution_score(x[perm], permuted) == pytest.approx(
        metrics.in_distribution_score(x, kde), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_adding_x_never_lowers_its_score(n, dim, seed):
    rng = np.random.default_rng(seed)
    pop = rng.uniform(size=(n, dim))
    x = rng.uniform(size=dim)
    before = metrics.in_distribution_score(x, metrics.fit_kde(pop, 20, 0.05))
    after = metrics.in_distribution_score(x, metrics.fit_kde(np.vstack([pop, x]), 20, 0.05))
    assert after >= before - 1e-15


def test_kde_rows_sum_to_one_on_mnist_like_data():
    rng = np.random.default_rng(0)
    pop = (rng.uniform(size=(30, 64)) > 0.7) * rng.uniform(size=(30, 64))
    kde = metrics.fit_kde(pop)
    np.testing.assert_allclose(kde.table.sum(axis=1), 1.0, atol=1e-12)


def test_kde_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.fit_kde(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        metrics.fit_kde(np.zeros((2, 3)), bins=1)
    with pytest.raises(ValueError):
        metrics.fit_kde(np.zeros((2, 3)), bandwidth=0)


def test_score_length_mismatch():
    kde = metrics.fit_kde(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics.in_distribution_score(np.zeros(4), kde)


def test_out_of_range_pixels_score_zero():
    kde = metrics.fit_kde(np.ones((3, 2)))
    assert metrics.in_distribution_score(np.array([1.2, 1.0]), kde) == pytest.approx(
        0.5 * kde.table[1, -1])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(2, 20), st.floats(0.005, 0.5),
       st.integers(0, 2**32 - 1))
def test_score_bounds(n, dim, bins, bw, seed):
    rng = np.random.default_rng(seed)
    kde = metrics.fit_kde(rng.uniform(size=(n, dim)), bins, bw)
    np.testing.assert_allclose(kde.table.sum(axis=1), 1.0, atol=1e-9)
    x = rng.uniform(-0.5, 1.5, size=dim)
    assert 0.0 <= metrics.in_distribution_score(x, kde) <= 1.0


def test_sparsity_examples():
    x = np.array([0.0, 0.5, 1.0, 0.2])
    assert metrics.sparsity(x, x) == 0.0
    assert metrics.sparsity(x, x + 0.1) == 1.0
    assert metrics.sparsity(x, x + np.array([0.0, 0.002, 0.0, 0.0])) == 0.25
    # changes at the threshold do not count
    assert metrics.sparsity(np.array([0.0]), np.array([0.5]), change_eps=0.5) == 0.0


def test_sparsity_single_changed_pixel():
    x = np.zeros(784)
    y = x.copy()
    y[300] = 0.5
    assert metrics.sparsity(x, y) == pytest.approx(1 / 784)


@given(arrays(np.float64, 10, elements=unit), arrays(np.float64, 10, elements=unit),
       st.floats(0, 1), st.floats(0, 1))
def test_sparsity_monotone_in_threshold(a, b, e1, e2):
    lo, hi = sorted((e1, e2))
    assert metrics.sparsity(a, b, hi) <= metrics.sparsity(a, b, lo)


def test_sparsity_errors():
    with pytest.raises(ValueError):
        metrics.sparsity([0, 1], [0])
    with pytest.raises(ValueError):
        metrics.sparsity([0], [0], change_eps=-1)


@given(arrays(np.float64, 8, elements=unit), arrays(np.float64, 8, elements=unit))
def test_sparsity_bounds_and_symmetry(a, b):
    s = metrics.sparsity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == metrics.sparsity(b, a)


def test_summarize_examples():
    s = metrics.summarize([1.0, 2.0, 3.0])
    assert (s.mean, s.std, s.n) == (2.0, 1.0, 3)
    assert s.ci_half_width == pytest.approx(1.96 / math.sqrt(3))
    s = metrics.summarize([1.0, 1.0, 5.0, 5.0])
    assert s.std == pytest.approx(math.sqrt(16 / 3))
    s4 = metrics.Summary(0.0, 2.0, metrics.Z95 * 2.0 / math.sqrt(4), 4)
    assert s4.ci_half_width == pytest.approx(1.96)


def test_summarize_identical_values():
    s = metrics.summarize([0.25] * 7)
    assert s.mean == 0.25 and s.std == 0.0 and s.ci_half_width == 0.0


def test_summarize_single_value_is_degenerate():
    s = metrics.summarize([0.3])
    assert s.degenerate and s.std == 0.0 and s.ci_half_width == 0.0
    with pytest.raises(ValueError):
        metrics.summarize([])


def test_aggregate_groups_and_order():
    recs = [
        {"method": "b", "target_p": 0.5, "x": 1.0},
        {"method": "a", "target_p": 0.9, "x": 2.0},
        {"method": "a", "target_p": 0.5, "x": 3.0},
        {"method": "a", "target_p": 0.5, "x": 5.0},
    ]
    rep = metrics.aggregate(recs, ("x",))
    assert [(g.method, g.target_p) for g in rep] == [("a", 0.5), ("a", 0.9), ("b", 0.5)]
    assert rep.get("a", 0.5).metrics["x"].mean == 4.0
    assert rep.get("b", 0.5).degenerate
    with pytest.raises(KeyError):
        rep.get("c", 0.5)


# -- brute-force oracles ----------------------------------------------------

def test_fit_kde_matches_direct_convolution():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n, dim = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        bins = int(rng.integers(2, 11))
        bw = float(rng.uniform(0.01, 0.6))
        pop = rng.uniform(size=(n, dim))
        got = metrics.fit_kde(pop, bins, bw).table
        np.testing.assert_allclose(got, oracles.kde_table(pop.tolist(), bins, bw), atol=1e-12)


def test_sparsity_matches_loop():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        a = rng.uniform(size=n)
        b = np.where(rng.uniform(size=n) < 0.5, a, rng.uniform(size=n))
        eps = float(rng.choice([0.0, 1e-3, 0.1]))
        assert metrics.sparsity(a, b, eps) == oracles.sparsity(a, b, eps)


def test_aggregate_matches_loop():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        recs = [{"method": str(rng.choice(["m1", "m2"])),
                 "target_p": float(rng.choice([0.5, 0.9])),
                 "v": float(rng.normal()), "w": float(rng.uniform())}
                for _ in range(int(rng.integers(1, 11)))]
        rep = metrics.aggregate(recs, ("v", "w"))
        ref = oracles.aggregate(recs, ("v", "w"))
        assert len(rep.groups) == len(ref)
        for g in rep:
            for name in ("v", "w"):
                s = g.metrics[name]
                mean, std, ci, n = ref[(g.method, g.target_p)][name]
                assert s.n == n
                assert s.mean == pytest.approx(mean, abs=1e-12)
                assert s.std == pytest.approx(std, abs=1e-12)
                assert s.ci_half_width == pytest.approx(ci, abs=1e-12)
