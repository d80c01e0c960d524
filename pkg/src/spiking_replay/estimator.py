"""Scikit-learn style front end so the spiking classifier composes with the
wider ecosystem (clone, get_params, cross-validation, pipelines).

``X`` is spike data: either a boolean/0-1 array of shape
[n_samples, timesteps, neurons] or a list of SpikeTensors.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .neurons import build_network
from .seeding import substream
from .spikes import SpikeTensor, pack
from .training import TrainConfig, evaluate, forward_batch, predict_from_counts, train_epochs


def check_spike_array(X, timesteps=None, neurons=None) -> np.ndarray:
    """Validate spike input and return a boolean [n, T, N] array."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], SpikeTensor):
        X = np.stack([tensor.to_dense() for tensor in X])
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"spike input must be [n_samples, timesteps, neurons], got shape {X.shape}")
    if X.size == 0:
        raise ValueError("spike input is empty")
    if X.dtype != bool:
        if not np.isin(X, (0, 1)).all():
            raise ValueError("spike values must be boolean or 0/1")
        X = X.astype(bool)
    if timesteps is not None and X.shape[1] != timesteps:
        raise ValueError(f"expected {timesteps} timesteps, got {X.shape[1]}")
    if neurons is not None and X.shape[2] != neurons:
        raise ValueError(f"expected {neurons} neurons, got {X.shape[2]}")
    return X


class SpikingClassifier(ClassifierMixin, BaseEstimator):
    """Recurrent spiking network classifier trained with surrogate-gradient BPTT.

    Predictions are the argmax of output-layer spike counts. Hidden layers are
    recurrent; the output layer has no feedback connections.
    """

    def __init__(
        self,
        hidden_sizes=(32, 16),
        alpha=0.9,
        beta=0.8,
        theta=1.0,
        surrogate_slope=25.0,
        eta=1e-3,
        epochs=20,
        batch_size=16,
        optimizer="adam",
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.alpha = alpha
        self.beta = beta
        self.theta = theta
        self.surrogate_slope = surrogate_slope
        self.eta = eta
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.random_state = random_state

    def fit(self, X, y):
        X = check_spike_array(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per sample")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        self.timesteps_, self.neurons_ = X.shape[1], X.shape[2]
        cfg = TrainConfig(
            eta=self.eta,
            epochs=self.epochs,
            batch_size=self.batch_size,
            surrogate_slope=self.surrogate_slope,
            seed=self.random_state,
            optimizer=self.optimizer,
        )
        self.network_ = build_network(
            self.neurons_,
            list(self.hidden_sizes) + [self.classes_.size],
            substream(self.random_state, "init"),
            alpha=self.alpha,
            beta=self.beta,
            theta=self.theta,
        )
        data = [(pack(x), int(label)) for x, label in zip(X, encoded)]
        self.history_ = train_epochs(self.network_, data, cfg)
        return self

    def _counts(self, X) -> np.ndarray:
        if not hasattr(self, "network_"):
            raise NotFittedError("fit must be called before predict")
        X = check_spike_array(X, self.timesteps_, self.neurons_)
        return forward_batch(self.network_, X).sum(axis=1)

    def predict(self, X):
        counts = self._counts(X)
        return self.classes_[predict_from_counts(counts)]

    def predict_proba(self, X):
        counts = self._counts(X).astype(np.float64)
        z = counts - counts.max(axis=1, keepdims=True)
        expz = np.exp(z)
        return expz / expz.sum(axis=1, keepdims=True)
