import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays

from cgnn.exposure import (
    NodeDistributions,
    PeerWeights,
    compute_peer_weights,
    exposure,
    feature_to_distribution,
    kl_divergence,
    peer_weight,
)
from cgnn.graph import Network, generate_random_network


def kl_by_summation(p, q):
    # independent oracle: direct term-by-term summation
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def test_uniform_features_give_uniform_distribution():
    d = feature_to_distribution(np.array([[1.0, 1.0]]), smoothing=0.01)
    assert np.allclose(d.probs, [[0.5, 0.5]])


def test_all_zero_features_give_uniform_distribution():
    d = feature_to_distribution(np.array([[0.0, 0.0]]), smoothing=0.01)
    assert np.allclose(d.probs, [[0.5, 0.5]])


def test_small_smoothing_limit_is_plain_normalization():
    d = feature_to_distribution(np.array([[3.0, 1.0]]), smoothing=1e-12)
    assert np.allclose(d.probs, [[0.75, 0.25]], atol=1e-9)


def test_negative_features_are_clamped():
    d = feature_to_distribution(np.array([[-5.0, 1.0]]), smoothing=1e-12)
    assert np.allclose(d.probs, [[0.0, 1.0]], atol=1e-9)


def test_distribution_validation():
    with pytest.raises(ValueError):
        feature_to_distribution(np.array([[1.0, 2.0]]), smoothing=0.0)
    with pytest.raises(ValueError):
        feature_to_distribution(np.zeros((3, 0)))
    with pytest.raises(ValueError, match="strictly positive"):
        NodeDistributions(np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError, match="sum to 1"):
        NodeDistributions(np.array([[0.5, 0.4]]))


def test_identical_distributions_give_weight_one_exactly():
    p = np.array([0.2, 0.3, 0.5])
    assert peer_weight(p, p) == 1.0


def test_peer_weight_known_value():
    # oracle: KL(P_i||P_j) = 0.5*ln(0.5/0.25) + 0.5*ln(0.5/0.75) = 0.143841...
    # so w = 1/(1 + KL) = 0.8742473545970211
    p_i = np.array([0.5, 0.5])
    p_j = np.array([0.25, 0.75])
    kl = kl_by_summation(p_i, p_j)
    expected = 1.0 / (1.0 + kl)
    w = peer_weight(p_i, p_j)
    assert w == pytest.approx(expected, abs=1e-15)
    assert abs(w - 0.8742473545970211) < 1e-9


def test_peer_weight_decreases_monotonically_with_divergence():
    p_i = np.array([0.5, 0.5])
    qs = np.linspace(0.5, 0.005, 60)
    weights = [peer_weight(p_i, np.array([q, 1.0 - q])) for q in qs]
    kls = [kl_by_summation(p_i, np.array([q, 1.0 - q])) for q in qs]
    assert all(np.diff(kls) > 0)
    assert all(np.diff(weights) < 0)
    assert weights[0] == 1.0


def test_peer_weight_is_asymmetric():
    p_i = np.array([0.5, 0.5])
    p_j = np.array([0.25, 0.75])
    assert peer_weight(p_i, p_j) != peer_weight(p_j, p_i)


@given(
    arrays(np.float64, (2, 4), elements=st.floats(0.01, 100.0)),
)
def test_peer_weight_in_unit_interval(raw):
    d = feature_to_distribution(raw, smoothing=1e-3)
    w_ij = peer_weight(d.probs[0], d.probs[1])
    assert 0.0 < w_ij <= 1.0


def test_compute_peer_weights_matches_scalar_path():
    rng = np.random.default_rng(3)
    net = generate_random_network(15, 0.3, seed=4)
    feats = rng.standard_normal((15, 6))
    dists = feature_to_distribution(feats)
    pw = compute_peer_weights(net, feats)
    assert len(pw) == 2 * net.n_edges
    for u, v in net.edges[:10]:
        assert pw.weight(u, v) == pytest.approx(peer_weight(dists.probs[u], dists.probs[v]), abs=1e-12)
        assert pw.weight(v, u) == pytest.approx(peer_weight(dists.probs[v], dists.probs[u]), abs=1e-12)


def test_peer_weights_validation():
    with pytest.raises(ValueError, match="0, 1"):
        PeerWeights(2, [0], [1], [1.5])
    with pytest.raises(ValueError, match="0, 1"):
        PeerWeights(2, [0], [1], [0.0])


def test_exposure_direct_sum():
    net = Network(4, [[0, 1], [0, 3]])
    pw = PeerWeights(4, [0, 0, 1, 3], [1, 3, 0, 0], [0.9, 0.5, 0.7, 0.2])
    z = exposure(net, pw, np.array([0, 1, 0, 1]))
    assert z[0] == pytest.approx(1.4, abs=1e-15)
    assert z[2] == 0.0  # isolated node, empty sum


def test_exposure_zero_treatments():
    net = generate_random_network(10, 0.4, seed=0)
    pw = compute_peer_weights(net, np.random.default_rng(0).standard_normal((10, 3)))
    assert np.array_equal(exposure(net, pw, np.zeros(10)), np.zeros(10))


def test_exposure_bounded_by_weight_row_sums():
    rng = np.random.default_rng(8)
    net = generate_random_network(30, 0.2, seed=8)
    pw = compute_peer_weights(net, rng.standard_normal((30, 4)))
    t = rng.integers(0, 2, 30)
    z = exposure(net, pw, t)
    assert np.all(z <= pw.row_sums() + 1e-12)
    assert np.all(z >= 0)


@given(st.integers(0, 1000))
def test_exposure_linear_in_treatments(seed):
    rng = np.random.default_rng(seed)
    net = generate_random_network(12, 0.3, seed=seed)
    pw = compute_peer_weights(net, rng.standard_normal((12, 3)))
    t1 = rng.random(12)
    t2 = rng.random(12)
    lhs = exposure(net, pw, t1 + t2)
    rhs = exposure(net, pw, t1) + exposure(net, pw, t2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_weights_csv_dump(tmp_path):
    net = Network(3, [[0, 1], [1, 2]])
    pw = compute_peer_weights(net, np.random.default_rng(1).standard_normal((3, 4)))
    path = tmp_path / "w.csv"
    pw.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "i,j,w"
    assert len(lines) == 1 + len(pw)
    i, j, w = lines[1].split(",")
    assert pw.weight(int(i), int(j)) == float(w)


def test_kl_divergence_nonnegative_and_zero_on_equal():
    p = np.array([0.1, 0.2, 0.7])
    assert kl_divergence(p, p) == 0.0
    q = np.array([0.3, 0.3, 0.4])
    assert kl_divergence(p, q) > 0
