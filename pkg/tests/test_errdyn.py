from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xguard.errdyn import (COMMUNICATION, COV_EPS, GeneralizedSample, GngConfig, GngNode, Scaler,
                             communication_feature_series, communication_features,
                             constant_velocity_matrix, extract_letters, generalized_error,
                             generalized_error_series, gng_fit, letter_scores, null_force_filter,
                             null_force_predict, positional_features, quantization_error)
from v2xguard.errors import DimensionError, InsufficientDataError, ParameterError


def _blobs(rng, n=300):
    a = rng.normal([0.0, 0.0], 1.0, size=(n, 2))
    b = rng.normal([100.0, 100.0], 1.0, size=(n, 2))
    return a, b


def test_null_force_predict_examples():
    p = null_force_predict(GeneralizedSample([0, 0], [1, 0]), dt=1.0)
    np.testing.assert_array_equal(p.value, [1, 0])
    np.testing.assert_array_equal(p.derivative, [1, 0])
    still = null_force_predict(GeneralizedSample([3, 4], [0, 0]))
    np.testing.assert_array_equal(still.value, [3, 4])


def test_generalized_error_examples():
    s = GeneralizedSample([1, 0], [0, 0])
    np.testing.assert_array_equal(generalized_error(s, s), np.zeros(4))
    e = generalized_error(GeneralizedSample([2, 0], [0, 0]), s)
    np.testing.assert_array_equal(e[:2], [1, 0])
    with pytest.raises(DimensionError):
        generalized_error(GeneralizedSample([1, 0, 0], [0, 0, 0]), s)


def test_sample_validation():
    with pytest.raises(DimensionError):
        GeneralizedSample([1, 2], [1])
    with pytest.raises(ParameterError):
        GeneralizedSample([np.inf], [0])


def test_error_series_zero_on_constant_velocity_track():
    t = np.arange(20) * 0.1
    track = np.column_stack([2 * t, -t, np.full(20, 2.0), np.full(20, -1.0)])
    np.testing.assert_allclose(generalized_error_series(track, 0.1), 0.0, atol=1e-12)
    a = constant_velocity_matrix(2, 0.1)
    np.testing.assert_allclose(a @ track[0], track[1])


def test_positional_features_are_platoon_relative():
    rng = np.random.default_rng(0)
    pos, vel = rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 3, 2))
    f = positional_features(pos, vel)
    np.testing.assert_allclose(f.sum(axis=1), 0.0, atol=1e-12)


def test_null_force_filter_recovers_constant_velocity():
    t = np.arange(200) * 0.1
    z = np.stack([np.column_stack([3 * t, 0 * t]), np.column_stack([-t + 5, 2 + 0 * t])], axis=1)
    est = null_force_filter(z, 0.1, r_std=0.01)
    np.testing.assert_allclose(est[-1, :, 2:], [[3, 0], [-1, 0]], atol=0.05)


def test_communication_features():
    a = np.array([[0, 1], [1, 0]])
    np.testing.assert_array_equal(communication_features(a), [[0, 1, 0, 0], [1, 0, 0, 0]])
    series = communication_feature_series(np.array([a, np.zeros((2, 2))]))
    np.testing.assert_array_equal(series[1, 0], [0, 0, 0, -1])


def test_gng_two_blobs_match_two_means(rng):
    a, b = _blobs(rng)
    x = np.vstack([a, b])
    nodes = gng_fit(x, GngConfig(max_nodes=2, lambda_insert=50, seed=3))
    protos = sorted((n.prototype for n in nodes), key=lambda p: p[0])
    assert np.linalg.norm(protos[0] - a.mean(axis=0)) < 1.0
    assert np.linalg.norm(protos[1] - b.mean(axis=0)) < 1.0


def test_gng_identical_samples():
    x = np.tile([[2.5, -1.0]], (50, 1))
    nodes = gng_fit(x, GngConfig(max_nodes=4, lambda_insert=10))
    for n in nodes:
        np.testing.assert_allclose(n.prototype, [2.5, -1.0])


def test_gng_deterministic(rng):
    x = rng.normal(size=(400, 3))
    cfg = GngConfig(max_nodes=8, lambda_insert=40, seed=9)
    a, b = gng_fit(x, cfg), gng_fit(x, cfg)
    assert len(a) == len(b)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.prototype, q.prototype)
        assert p.edges == q.edges


def test_gng_grows_and_reduces_error(rng):
    x = rng.uniform(-5, 5, size=(2000, 2))
    few = gng_fit(x, GngConfig(max_nodes=2, seed=1))
    many = gng_fit(x, GngConfig(max_nodes=20, lambda_insert=50, seed=1))
    assert 2 < len(many) <= 20
    qe = lambda nodes: quantization_error(x, np.array([n.prototype for n in nodes]))
    assert qe(many) < qe(few)


def test_gng_errors():
    with pytest.raises(InsufficientDataError):
        gng_fit(np.zeros((3, 2)), GngConfig(max_nodes=5))
    with pytest.raises(ParameterError):
        gng_fit(np.zeros((30, 2)), GngConfig(max_nodes=1))


def test_single_node_letter_is_sample_mean(rng):
    x = rng.normal(size=(100, 4))
    (letter,) = extract_letters([GngNode(np.zeros(4))], x)
    np.testing.assert_allclose(letter.mean, x.mean(axis=0))
    np.testing.assert_allclose(letter.covariance, np.cov(x.T, bias=True) + COV_EPS * np.eye(4))


def test_separated_blob_letters(rng):
    a, b = _blobs(rng)
    x = np.vstack([a, b])
    letters = extract_letters([GngNode(np.array([1.0, 1.0])), GngNode(np.array([90.0, 90.0]))], x)
    np.testing.assert_allclose(letters[0].mean, a.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(letters[1].mean, b.mean(axis=0), atol=1e-9)
    assert [l.member_count for l in letters] == [len(a), len(b)]


def test_singleton_cluster_covariance():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [50.0, 50.0]])
    letters = extract_letters([GngNode(np.zeros(2)), GngNode(np.array([50.0, 50.0]))], x, COMMUNICATION)
    np.testing.assert_allclose(letters[1].covariance, COV_EPS * np.eye(2))
    assert letters[1].modality == COMMUNICATION


def test_letter_scores_metrics(rng):
    x = rng.normal(size=(50, 2))
    letters = extract_letters([GngNode(np.zeros(2))], x)
    maha = letter_scores(x, letters, "mahalanobis")[:, 0]
    l = letters[0]
    d = x - l.mean
    np.testing.assert_allclose(maha, np.einsum("ni,ij,nj->n", d, np.linalg.inv(l.covariance), d))
    nll = letter_scores(x, letters, "nll")[:, 0]
    np.testing.assert_allclose(nll - maha, np.log(np.linalg.det(l.covariance)))
    with pytest.raises(ParameterError):
        letter_scores(x, letters, "cosine")


def test_scaler_round_trip(rng):
    x = rng.normal(3, 2, size=(100, 3))
    x[:, 2] = 7.0
    s = Scaler.fit(x)
    assert s.scale[2] == 1.0
    np.testing.assert_allclose(s.inverse(s.transform(x)), x)
    cov = np.cov(x.T)
    np.testing.assert_allclose(s.inverse_cov(s.transform_cov(cov)), cov)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(2, 6))
def test_letter_covariances_are_spd(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 3))
    nodes = [GngNode(p) for p in x[:k]]
    for l in extract_letters(nodes, x, refine=True):
        np.testing.assert_allclose(l.covariance, l.covariance.T)
        assert np.linalg.eigvalsh(l.covariance).min() >= COV_EPS * 0.999
