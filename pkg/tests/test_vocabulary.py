from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xguard.errdyn import POSITIONAL, Letter
from v2xguard.errors import (CorruptModelError, DimensionError, InsufficientDataError,
                             ModelVersionError, ParameterError)
from v2xguard.scenario import synthesize_freeway
from v2xguard.vocabulary import (TransitionMatrix, build_words, learn_interaction, learn_transitions,
                                 learn_vocabulary, letterize, load_model, model_to_json, save_model,
                                 tau_bin)


def _letter(i, mean, var=1.0):
    mean = np.asarray(mean, dtype=float)
    return Letter(i, mean, var * np.eye(len(mean)), POSITIONAL, 5)


def test_letterize_examples():
    letters = [_letter(0, [0, 0]), _letter(1, [4, 0], var=0.01), _letter(2, [-4, 0])]
    assert letterize(np.array([[4.0, 0.0]]), letters).tolist() == [1]
    assert letterize(np.array([[0.0, 0.0]]), letters).tolist() == [0]
    # equidistant between letters 0 and 2 (same covariance): lowest id wins
    assert letterize(np.array([[-2.0, 0.0]]), letters).tolist() == [0]
    x = np.random.default_rng(0).normal(size=(30, 2))
    assert set(letterize(x, letters[:1]).tolist()) == {0}
    with pytest.raises(ParameterError):
        letterize(x, [])


def test_letterize_keeps_leading_shape():
    letters = [_letter(0, [0, 0]), _letter(1, [4, 0])]
    assert letterize(np.zeros((5, 3, 2)), letters).shape == (5, 3)


def test_build_words_examples():
    words, series = build_words([(0, 1), (0, 1), (1, 1)])
    assert [w.letters for w in words] == [(0, 1), (1, 1)]
    assert series.tolist() == [0, 0, 1]
    assert len(build_words([(2, 2)] * 7)[0]) == 1
    assert len(build_words([(i, 0) for i in range(6)])[0]) == 6


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_build_words_stable_and_invertible(frames):
    words, series = build_words(frames)
    again, series2 = build_words(frames)
    assert again == words and series.tolist() == series2.tolist()
    assert [words[s].letters for s in series] == [tuple(f) for f in frames]


def test_transition_examples():
    np.testing.assert_array_equal(learn_transitions([0, 1, 0, 1], 2, 0.0).probs, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(learn_transitions([0, 0, 0], 2, 0.0).probs[0], [1, 0])
    tm = learn_transitions([0, 1, 0], 3, 1.0)
    np.testing.assert_allclose(tm.probs[2], [1 / 3] * 3)
    with pytest.raises(ParameterError):
        learn_transitions([0, 3], 3)
    with pytest.raises(InsufficientDataError):
        learn_transitions([0], 3)


def test_tau_conditioned_transitions():
    # state 0 is held for dwell 1 and 2 (bin 0) and left at dwell 3 (bin 1)
    series = [0, 0, 0, 1] * 50
    tm = learn_transitions(series, 2, 0.0, (1, 3, 6))
    assert tau_bin([1, 2, 3, 5, 6, 100], (1, 3, 6)).tolist() == [0, 0, 1, 1, 2, 2]
    np.testing.assert_allclose(tm.rows(np.array([0]), np.array([1])), [[1, 0]])
    np.testing.assert_allclose(tm.rows(np.array([0]), np.array([3])), [[0, 1]])
    # unseen bin falls back to the unconditioned row
    np.testing.assert_allclose(tm.rows(np.array([0]), np.array([9])), tm.probs[[0]])


def test_transition_dict_round_trip():
    tm = learn_transitions([[0, 1, 1, 2], [2, 2, 0]], 3, 1e-3, (1, 3))
    again = TransitionMatrix.from_dict(json.loads(json.dumps(tm.to_dict())))
    np.testing.assert_array_equal(again.probs, tm.probs)
    np.testing.assert_array_equal(again.tau_probs, tm.tau_probs)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=60), st.floats(0, 2))
def test_transition_rows_stochastic(series, smoothing):
    tm = learn_transitions(series, 5, smoothing, (1, 3, 6))
    np.testing.assert_allclose(tm.probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(tm.tau_probs.sum(axis=2), 1.0, atol=1e-9)
    assert tm.counts.sum() == len(series) - 1


def test_interaction_examples():
    p = [0, 1, 2, 0, 1, 2]
    im = learn_interaction(p, [2, 0, 1, 2, 0, 1], (3, 3), 0.0)
    np.testing.assert_array_equal(im.probs, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    s = 0.01
    one = learn_interaction([1], [2], (2, 4), s)
    assert one.probs[1, 2] == pytest.approx((1 + s) / (1 + 4 * s))
    with pytest.raises(DimensionError):
        learn_interaction([0, 1], [0], (2, 2))


def test_interaction_independent_series_are_uniform():
    rng = np.random.default_rng(3)
    n = 40_000
    im = learn_interaction(rng.integers(0, 3, n), rng.integers(0, 4, n), (3, 4), 0.0)
    per_row = n / 3
    stderr = np.sqrt(0.25 * 0.75 / per_row)
    assert np.all(np.abs(im.probs - 0.25) < 3 * stderr + 1e-3)


def test_learn_vocabulary_bundle(small_run):
    scenario, streams, bundle = small_run
    assert bundle.n_vehicles == scenario.n_vehicles
    for tm in (bundle.pos_word_tm, bundle.comm_word_tm, bundle.pos_letter_tm, bundle.comm_letter_tm):
        np.testing.assert_allclose(tm.probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(bundle.phi.probs.sum(axis=1), 1.0, atol=1e-9)
    assert bundle.phi.probs.shape == (bundle.pos.n_words, bundle.comm.n_words)
    assert len(bundle.comm.word_graphs) == bundle.comm.n_words
    # every training frame maps to a known word
    assert bundle.training_series["positional"].max() < bundle.pos.n_words


def test_learn_vocabulary_rejects_tiny_input():
    sc = synthesize_freeway(3, 60, 2, 0).slice(0, 2)
    with pytest.raises(InsufficientDataError):
        learn_vocabulary(sc, np.zeros((2, 3, 3), dtype=np.uint8))


def test_model_round_trip(small_run, tmp_path):
    bundle = small_run[2]
    save_model(bundle, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    assert model_to_json(again) == model_to_json(bundle)
    assert again.pos.words == bundle.pos.words


def test_model_corruption(small_run, tmp_path):
    bundle = small_run[2]
    path = tmp_path / "m.json"
    save_model(bundle, path)
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(CorruptModelError):
        load_model(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["version"] = "v2xguard-model/0"
    (tmp_path / "old.json").write_text(json.dumps(doc))
    with pytest.raises(ModelVersionError):
        load_model(tmp_path / "old.json")
    doc = json.loads(text)
    doc["config"]["d_k"] = 99
    (tmp_path / "fp.json").write_text(json.dumps(doc))
    with pytest.raises(CorruptModelError, match="fingerprint"):
        load_model(tmp_path / "fp.json")
    doc = json.loads(text)
    doc["interaction"]["probs"][0][0] += 0.5
    (tmp_path / "rows.json").write_text(json.dumps(doc))
    with pytest.raises(CorruptModelError):
        load_model(tmp_path / "rows.json")
