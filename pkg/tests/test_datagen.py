import numpy as np
import pytest
from scipy import stats

from genedep.datagen import (GroundTruth, gen_coupled_partitions, gen_network_responses,
                             gen_paired_latent, gen_probeset_data, gen_window_dependency,
                             probeset_params)


def test_paired_latent_shapes_and_determinism():
    x, y, t = gen_paired_latent(1, 100, 5, 5, 1, 0.1)
    assert x.shape == (5, 100) and y.shape == (5, 100)
    x2, y2, _ = gen_paired_latent(1, 100, 5, 5, 1, 0.1)
    assert x.values.tobytes() == x2.values.tobytes() and y.values.tobytes() == y2.values.tobytes()
    assert np.asarray(t.payload["Z"]).shape == (1, 100)
    with pytest.raises(ValueError):
        gen_paired_latent(1, 10, 2, 3, 3, 0.1)


def test_paired_latent_cross_covariance_converges():
    n = 100_000
    x, y, t = gen_paired_latent(3, n, 3, 2, 2, 1e-3)
    wx, wy = t.payload["W_x"], t.payload["W_y"]
    cxy = x.values @ y.values.T / n
    # Var(x_a y_b) for jointly Gaussian zero-mean pairs
    cxx = wx @ wx.T
    cyy = wy @ wy.T
    se = np.sqrt((np.outer(np.diag(cxx), np.diag(cyy)) + (wx @ wy.T) ** 2) / n)
    assert np.all(np.abs(cxy - wx @ wy.T) < 3 * se + 1e-12)


def test_probeset_difference_variance():
    # Var(m_tj) = Var(e_tj - e_cj) = 2 tau2_j, sampled over independent data sets
    tau2 = np.array([0.5, 1.0, 2.0])
    m = np.array([gen_probeset_data(s, 2, 3, np.zeros(2), tau2, np.array([3.0, -1.0, 8.0]))[0].values
                  for s in range(4000)])
    diff = m[:, :, 1] - m[:, :, 0]
    np.testing.assert_allclose(diff.var(axis=0), 2 * tau2, rtol=0.1)


def test_probeset_validation_and_truth():
    with pytest.raises(ValueError):
        gen_probeset_data(0, 3, 2, np.zeros(3), np.array([1.0, 0.0]), np.zeros(2))
    d, tau2, aff, bad = probeset_params(5, 20, 10, 1, 10.0)
    expr, truth = gen_probeset_data(5, 20, 10, d, tau2, aff)
    assert list(truth.payload["contaminated"]) == list(bad)
    assert expr.shape == (10, 21)
    a, _ = gen_probeset_data(5, 20, 10, d, tau2, aff)
    assert a.values.tobytes() == expr.values.tobytes()


def test_network_responses_connected():
    expr, net, truth = gen_network_responses(0, 80, 0.05, 5, 3, 60, 5.0)
    assert net.is_connected_subset(truth.payload["planted"])
    assert expr.shape == (80, 60)
    with pytest.raises(ValueError):
        gen_network_responses(0, 4, 0.1, 5, 3, 10, 5.0)


def test_network_responses_zero_separation():
    expr, net, truth = gen_network_responses(2, 40, 0.1, 10, 3, 400, 0.0)
    planted = expr.feature_index(truth.payload["planted"])
    rest = np.setdiff1d(np.arange(40), planted)
    p = stats.ttest_ind(expr.values[planted].ravel(), expr.values[rest].ravel()).pvalue
    assert p > 0.01


def test_network_responses_label_histogram():
    w = np.array([0.5, 0.3, 0.2])
    n = 5000
    _, _, truth = gen_network_responses(4, 10, 0.1, 3, 3, n, 5.0, weights=w)
    counts = np.bincount(truth.payload["labels"], minlength=3)
    p = stats.chisquare(counts, n * w).pvalue
    assert p > 0.001


def test_coupled_partitions_tables():
    from genedep.assoclust import contingency_counts
    _, _, t1 = gen_coupled_partitions(0, 300, 2, 2, 3, 3, 1.0)
    tab = contingency_counts(t1.payload["labels_x"], t1.payload["labels_y"], 3, 3).counts
    assert np.count_nonzero(tab - np.diag(np.diag(tab))) == 0
    with pytest.raises(ValueError):
        gen_coupled_partitions(0, 10, 2, 2, 3, 2, 1.0)
    joint = gen_coupled_partitions(0, 10, 2, 2, 3, 3, 0.5)[2].payload["joint"]
    off = joint.sum() - np.trace(joint)
    assert 0 < off < 6 / 9


def _mi(a, b):
    t = np.histogram2d(a, b, bins=[np.arange(4) - 0.5] * 2)[0] / len(a)
    pa, pb = t.sum(1), t.sum(0)
    nz = t > 0
    return float(np.sum(t[nz] * np.log(t[nz] / np.outer(pa, pb)[nz])))


def test_coupled_partitions_independent_mi():
    _, _, t = gen_coupled_partitions(7, 400, 2, 2, 3, 3, 0.0)
    lx, ly = t.payload["labels_x"], t.payload["labels_y"]
    rng = np.random.default_rng(0)
    null = [_mi(lx, rng.permutation(ly)) for _ in range(200)]
    assert _mi(lx, ly) < np.quantile(null, 0.95)


def test_window_dependency_block():
    x, y, pos, truth = gen_window_dependency(0, 50, 40, 20, 10)
    assert truth.payload["block"] == [f"f{i:03d}" for i in range(20, 30)]
    assert pos["f021"] == ("1", 21000)
    with pytest.raises(ValueError):
        gen_window_dependency(0, 10, 5, 5, 10)


def test_ground_truth_json_roundtrip():
    _, _, t = gen_paired_latent(0, 5, 2, 2, 1, 1.0)
    back = GroundTruth.from_json(t.to_json())
    assert back.variant == "paired-latent"
    np.testing.assert_array_equal(back.payload["Z"], t.payload["Z"])
