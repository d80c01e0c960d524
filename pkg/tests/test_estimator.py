"""Sklearn-facing estimator: params, validation, fit/predict, composition."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from spiking_replay.estimator import SpikingClassifier, check_spike_array
from spiking_replay.spikes import pack
from spiking_replay.synth import SynthSpec, make_synthetic_spikeset


def small_problem(seed=0):
    spec = SynthSpec(num_classes=3, num_scenarios=1, samples_per=20,
                     timesteps=50, neurons=32)
    data = make_synthetic_spikeset(spec, seed=seed)
    return data.dense_batch(), np.asarray(data.class_ids)


def test_get_set_params_and_clone():
    clf = SpikingClassifier(hidden_sizes=(8, 4), eta=5e-3, epochs=2)
    params = clf.get_params()
    assert params["eta"] == 5e-3 and params["hidden_sizes"] == (8, 4)
    twin = clone(clf)
    assert twin.get_params() == params
    clf.set_params(epochs=7)
    assert clf.get_params()["epochs"] == 7


def test_fit_predict_score():
    X, y = small_problem()
    clf = SpikingClassifier(hidden_sizes=(24, 12), epochs=15, eta=2e-3, random_state=1)
    clf.fit(X, y)
    assert clf.score(X, y) >= 0.9
    proba = clf.predict_proba(X[:5])
    assert proba.shape == (5, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        SpikingClassifier().predict(np.zeros((1, 5, 4), dtype=bool))


def test_labels_can_be_arbitrary_values():
    X, y = small_problem()
    relabeled = np.array([10, 20, 30])[y]
    clf = SpikingClassifier(hidden_sizes=(16, 8), epochs=8, eta=2e-3).fit(X, relabeled)
    assert set(np.unique(clf.predict(X))) <= {10, 20, 30}


def test_input_validation():
    with pytest.raises(ValueError):
        check_spike_array(np.zeros((4, 5)))  # 2-D
    with pytest.raises(ValueError):
        check_spike_array(np.full((2, 3, 4), 2))  # non-binary
    tensors = [pack(np.zeros((6, 3), dtype=bool))]
    assert check_spike_array(tensors).shape == (1, 6, 3)
    with pytest.raises(ValueError):
        check_spike_array(tensors, timesteps=9)


def test_fit_shape_mismatch_raises():
    X, y = small_problem()
    clf = SpikingClassifier(epochs=1)
    with pytest.raises(ValueError):
        clf.fit(X, y[:-1])


def test_cross_val_composes():
    X, y = small_problem()
    clf = SpikingClassifier(hidden_sizes=(16, 8), epochs=8, eta=2e-3, random_state=0)
    scores = cross_val_score(clf, X, y, cv=2)
    assert scores.shape == (2,)
    assert scores.mean() > 0.4  # well above 1/3 chance at this tiny budget


def test_refit_is_deterministic():
    X, y = small_problem()
    clf = SpikingClassifier(hidden_sizes=(16, 8), epochs=5, eta=2e-3, random_state=3)
    first = clf.fit(X, y).predict(X)
    second = clf.fit(X, y).predict(X)
    assert np.array_equal(first, second)
