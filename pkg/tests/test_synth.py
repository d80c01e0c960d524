"""Synthetic generator: bookkeeping, determinism, separability, scenario shift."""

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from spiking_replay.estimator import SpikingClassifier
from spiking_replay.spikes import load_spikeset, save_spikeset
from spiking_replay.synth import SynthSpec, class_neuron_subsets, make_synthetic_spikeset


def test_sample_bookkeeping(tmp_path):
    spec = SynthSpec(num_classes=4, num_scenarios=2, samples_per=50)
    spikeset = make_synthetic_spikeset(spec, seed=1)
    assert len(spikeset) == 400
    assert spikeset.timesteps == 100 and spikeset.neurons == 64
    assert spikeset.class_counts().tolist() == [100, 100, 100, 100]
    path = tmp_path / "synth.spks"
    save_spikeset(spikeset, path)
    assert load_spikeset(path) == spikeset


def test_same_seed_is_byte_identical(tmp_path):
    spec = SynthSpec(num_classes=3, num_scenarios=2, samples_per=10)
    a, b = tmp_path / "a.spks", tmp_path / "b.spks"
    save_spikeset(make_synthetic_spikeset(spec, seed=9), a)
    save_spikeset(make_synthetic_spikeset(spec, seed=9), b)
    assert a.read_bytes() == b.read_bytes()


def test_pattern_seed_shares_structure_across_splits():
    spec = SynthSpec(num_classes=3, num_scenarios=1, samples_per=5)
    assert [s.tolist() for s in class_neuron_subsets(spec, 42)] == \
           [s.tolist() for s in class_neuron_subsets(spec, 42)]
    train = make_synthetic_spikeset(spec, seed=1, pattern_seed=42)
    test = make_synthetic_spikeset(spec, seed=2, pattern_seed=42)
    assert train != test  # different sample noise, same structure


def test_classes_are_count_separable():
    spec = SynthSpec(num_classes=4, num_scenarios=1, samples_per=25)
    spikeset = make_synthetic_spikeset(spec, seed=3)
    counts = np.array([t.to_dense().sum(axis=0) for t in spikeset.tensors])
    model = LogisticRegression(max_iter=2000).fit(counts, spikeset.class_ids)
    assert model.score(counts, spikeset.class_ids) == 1.0


def test_generator_validation():
    with pytest.raises(ValueError):
        SynthSpec(num_classes=1)
    with pytest.raises(ValueError):
        SynthSpec(num_scenarios=0)
    with pytest.raises(ValueError):
        SynthSpec(rate_hi=0.1, rate_lo=0.2)


def test_scenario_shift_hurts_held_out_scenario():
    """A model fit on scenario 0 must score >= 5 points lower on scenario 1."""
    gaps = []
    for seed in range(5):
        spec = SynthSpec(num_classes=4, num_scenarios=2, samples_per=30)
        train = make_synthetic_spikeset(spec, seed=100 + seed, pattern_seed=seed)
        test = make_synthetic_spikeset(spec, seed=200 + seed, pattern_seed=seed)
        sub = train.subset(scenarios=[0])
        clf = SpikingClassifier(hidden_sizes=(32, 16), epochs=15, eta=2e-3,
                                batch_size=16, random_state=seed)
        clf.fit(sub.dense_batch(), sub.class_ids)
        seen = test.subset(scenarios=[0])
        shifted = test.subset(scenarios=[1])
        gaps.append(clf.score(seen.dense_batch(), seen.class_ids)
                    - clf.score(shifted.dense_batch(), shifted.class_ids))
    assert np.mean(gaps) >= 0.05
