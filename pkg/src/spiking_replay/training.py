"""Surrogate-gradient BPTT: loss, exact reverse-mode gradients, optimizers, loops.

The forward pass emits hard (0/1) spikes; the backward pass substitutes the
fast-sigmoid derivative ``1 / (1 + k|u|)^2`` for the step function
(straight-through surrogate). A separate "soft" forward mode replaces the step
with a function whose true derivative equals that surrogate, which makes the
whole unrolled network differentiable and lets finite differences certify the
reverse-mode wiring; soft mode exists only for verification, never training.

All batching is deterministic: shuffling comes from a seeded generator and
gradient accumulation runs in fixed sample order, so (seed, config, data)
gives bit-identical parameter trajectories and metrics.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .neurons import Network, NumericError
from .seeding import substream
from .spikes import SpikeTensor, pack

HARD = "hard"
SOFT = "soft"


def surrogate_grad(u, k: float):
    """Fast-sigmoid derivative 1 / (1 + k|u|)^2; u is membrane minus threshold."""
    return 1.0 / (1.0 + k * np.abs(u)) ** 2


def soft_spike(u, k: float):
    """Differentiable spike relaxation whose exact derivative is surrogate_grad."""
    return 0.5 + u / (1.0 + k * np.abs(u))


@dataclass
class TrainConfig:
    """Optimization hyperparameters. eta=0 is allowed and leaves weights fixed."""

    eta: float = 1e-3
    epochs: int = 1
    batch_size: int = 32
    surrogate_slope: float = 25.0
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.surrogate_slope <= 0:
            raise ValueError("surrogate_slope must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LayerTrace:
    """Everything the reverse pass needs for one layer: [T x B x *] arrays."""

    inputs: np.ndarray
    syn: np.ndarray
    mem: np.ndarray
    spikes: np.ndarray


@dataclass
class ForwardTrace:
    """Unrolled forward record of a whole network for one minibatch."""

    layers: list
    mode: str
    slope: float

    @property
    def timesteps(self) -> int:
        return self.layers[0].spikes.shape[0]

    def output_counts(self) -> np.ndarray:
        """Per-class spike counts of the final layer, summed over time: [B x C]."""
        return self.layers[-1].spikes.sum(axis=0)


def forward_trace(net: Network, batch, slope: float, mode: str = HARD) -> ForwardTrace:
    """Simulate a [B x T x in] batch through the network, recording the trace."""
    x = np.asarray(batch, dtype=np.float64).transpose(1, 0, 2)  # [T x B x in]
    timesteps, batch_size = x.shape[0], x.shape[1]
    traces = []
    for layer in net.layers:
        out = layer.out_size
        syn = np.zeros((timesteps, batch_size, out))
        mem = np.zeros((timesteps, batch_size, out))
        spk = np.zeros((timesteps, batch_size, out))
        syn_prev = np.zeros((batch_size, out))
        mem_prev = np.zeros((batch_size, out))
        s_prev = np.zeros((batch_size, out))
        for t in range(timesteps):
            syn_t = layer.alpha * syn_prev + x[t] @ layer.W.T
            if layer.recurrent:
                syn_t += s_prev @ layer.V.T
            mem_t = layer.beta * mem_prev + syn_t - layer.theta * s_prev
            u = mem_t - layer.theta
            s_t = (u >= 0.0).astype(np.float64) if mode == HARD else soft_spike(u, slope)
            syn[t], mem[t], spk[t] = syn_t, mem_t, s_t
            syn_prev, mem_prev, s_prev = syn_t, mem_t, s_t
        traces.append(LayerTrace(inputs=x, syn=syn, mem=mem, spikes=spk))
        x = spk
    return ForwardTrace(traces, mode, slope)


def forward_batch(net: Network, batch) -> np.ndarray:
    """Inference-only forward; returns final-layer spikes as bool [B x T x out].

    An empty network is the identity (the naive-rehearsal capture path).
    """
    if not net.layers:
        return np.asarray(batch, dtype=bool)
    x = np.asarray(batch, dtype=np.float64).transpose(1, 0, 2)
    timesteps, batch_size = x.shape[0], x.shape[1]
    for layer in net.layers:
        out = layer.out_size
        spk = np.zeros((timesteps, batch_size, out))
        syn_prev = np.zeros((batch_size, out))
        mem_prev = np.zeros((batch_size, out))
        s_prev = np.zeros((batch_size, out))
        for t in range(timesteps):
            syn_t = layer.alpha * syn_prev + x[t] @ layer.W.T
            if layer.recurrent:
                syn_t += s_prev @ layer.V.T
            mem_t = layer.beta * mem_prev + syn_t - layer.theta * s_prev
            s_t = (mem_t - layer.theta >= 0.0).astype(np.float64)
            spk[t] = s_t
            syn_prev, mem_prev, s_prev = syn_t, mem_t, s_t
        x = spk
    return x.transpose(1, 0, 2).astype(bool)


def spike_count_cross_entropy(counts, labels):
    """Softmax cross-entropy over per-class spike counts, averaged over the batch.

    Returns (loss, d loss / d counts) with the gradient already carrying the
    1/B batch-mean factor.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, n_class = counts.shape
    if labels.min() < 0 or labels.max() >= n_class:
        raise ValueError(f"label out of range for {n_class} classes")
    z = counts - counts.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    loss = float(-np.log(p[np.arange(batch), labels]).mean())
    grad = p.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def loss_spike_count_ce(output: SpikeTensor, label: int):
    """Single-sample count loss on an output spike train: (loss, d loss/d counts)."""
    counts = output.to_dense().sum(axis=0, dtype=np.float64)
    loss, grad = spike_count_cross_entropy(counts[None, :], [label])
    return loss, grad[0]


def bptt_backward(net: Network, trace: ForwardTrace, dcounts) -> dict:
    """Exact reverse-mode gradients of the surrogate-relaxed unrolled network.

    ``dcounts`` is d loss / d output-spike-counts, [B x C]. Returns
    ``{"<i>.W": ..., "<i>.V": ...}`` for every layer (V only where recurrent),
    covering the paths through feed-forward weights, recurrent feedback, the
    membrane/synaptic leaks, and the soft-reset term.
    """
    timesteps = trace.timesteps
    k = trace.slope
    dcounts = np.asarray(dcounts, dtype=np.float64)
    ds_ext = np.broadcast_to(dcounts, (timesteps,) + dcounts.shape)
    grads = {}
    for li in reversed(range(net.n_layers)):
        layer = net.layers[li]
        ltr = trace.layers[li]
        batch = ltr.spikes.shape[1]
        lam_syn_next = np.zeros((batch, layer.out_size))
        lam_mem_next = np.zeros((batch, layer.out_size))
        dW = np.zeros_like(layer.W)
        dV = np.zeros_like(layer.V)
        dx = np.zeros_like(ltr.inputs) if li > 0 else None
        for t in reversed(range(timesteps)):
            ds = ds_ext[t] - layer.theta * lam_mem_next
            if layer.recurrent:
                ds = ds + lam_syn_next @ layer.V
            du = ds * surrogate_grad(ltr.mem[t] - layer.theta, k)
            lam_mem = du + layer.beta * lam_mem_next
            lam_syn = lam_mem + layer.alpha * lam_syn_next
            if not np.isfinite(lam_syn).all():
                raise NumericError(f"gradient blew up at layer {li}, timestep {t}")
            dW += lam_syn.T @ ltr.inputs[t]
            if layer.recurrent and t > 0:
                dV += lam_syn.T @ ltr.spikes[t - 1]
            if li > 0:
                dx[t] = lam_syn @ layer.W
            lam_syn_next, lam_mem_next = lam_syn, lam_mem
        grads[f"{li}.W"] = dW
        if layer.recurrent:
            grads[f"{li}.V"] = dV
        ds_ext = dx
    return grads


def trainable_params(net: Network) -> dict:
    """Name -> array map of every trainable tensor (V only on recurrent layers)."""
    params = {}
    for i, layer in enumerate(net.layers):
        params[f"{i}.W"] = layer.W
        if layer.recurrent:
            params[f"{i}.V"] = layer.V
    return params


def apply_params(net: Network, params: dict) -> None:
    """Rebind updated arrays onto the layer objects (shared with any split views)."""
    for i, layer in enumerate(net.layers):
        layer.W = params[f"{i}.W"]
        if layer.recurrent:
            layer.V = params[f"{i}.V"]


class SgdOptimizer:
    """Plain gradient descent: p' = p - eta * g."""

    def __init__(self, eta: float):
        self.eta = eta

    def step(self, params: dict, grads: dict) -> dict:
        _check_shapes(params, grads)
        return {name: p - self.eta * grads[name] for name, p in params.items()}


class AdamOptimizer:
    """Standard Adam with bias correction."""

    def __init__(self, eta: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> dict:
        _check_shapes(params, grads)
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                self.m[name] = m
                self.v[name] = np.zeros_like(p)
            self.m[name] = m = self.beta1 * m + (1.0 - self.beta1) * g
            self.v[name] = v = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            out[name] = p - self.eta * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def _check_shapes(params: dict, grads: dict) -> None:
    if set(params) != set(grads):
        raise ValueError(f"parameter/gradient key mismatch: {sorted(set(params) ^ set(grads))}")
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ValueError(f"shape mismatch for {name}: {p.shape} vs {grads[name].shape}")


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.eta)
    return AdamOptimizer(cfg.eta, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


@dataclass
class EpochMetrics:
    """Per-epoch training summary emitted by train_epochs."""

    epoch: int
    loss: float
    accuracy: float
    wall_ms: float


def train_epochs(net: Network, data, cfg: TrainConfig, rng=None, epoch_hook=None):
    """Minibatch-train a network (or learning sub-network) in place.

    ``data`` is a sequence of (SpikeTensor, label) pairs. Each epoch shuffles
    with the seeded generator, accumulates gradients per batch in fixed sample
    order, and steps the optimizer. Returns one EpochMetrics per epoch;
    ``epoch_hook(metrics)`` runs after each epoch (for test-set logging).
    """
    data = list(data)
    if not data:
        raise ValueError("training data must be nonempty")
    for tensor, _ in data:
        if tensor.neurons != net.input_size:
            raise ValueError(
                f"sample has {tensor.neurons} neurons, network expects {net.input_size}"
            )
    labels_all = np.array([label for _, label in data], dtype=np.int64)
    if labels_all.min() < 0 or labels_all.max() >= net.output_size:
        raise ValueError("label out of range for network output size")
    rng = substream(cfg.seed, "shuffle") if rng is None else rng
    optimizer = make_optimizer(cfg)
    params = trainable_params(net)
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = np.stack([data[i][0].to_dense() for i in idx])
            labels = labels_all[idx]
            trace = forward_trace(net, batch, cfg.surrogate_slope, HARD)
            counts = trace.output_counts()
            loss, dcounts = spike_count_cross_entropy(counts, labels)
            grads = bptt_backward(net, trace, dcounts)
            params = optimizer.step(params, grads)
            apply_params(net, params)
            total_loss += loss * idx.size
            correct += int((predict_from_counts(counts) == labels).sum())
        wall_ms = (time.perf_counter() - started) * 1e3
        metrics = EpochMetrics(epoch, total_loss / n, correct / n, wall_ms)
        history.append(metrics)
        if epoch_hook is not None:
            epoch_hook(metrics)
    return history


def predict_from_counts(counts) -> np.ndarray:
    """Top-1 prediction: argmax of per-class spike counts (first index on ties)."""
    return np.argmax(np.atleast_2d(counts), axis=1)


def evaluate(net: Network, testset, classes=None, scenarios=None, batch_size: int = 256) -> float:
    """Top-1 accuracy on a SpikeSet, optionally restricted by class/scenario."""
    sub = testset.subset(classes, scenarios) if (classes is not None or scenarios is not None) else testset
    if len(sub) == 0:
        raise ValueError("evaluation set is empty after filtering")
    correct = 0
    for start in range(0, len(sub), batch_size):
        idx = range(start, min(start + batch_size, len(sub)))
        batch = sub.dense_batch(idx)
        counts = forward_batch(net, batch).sum(axis=1)
        predictions = predict_from_counts(counts)
        correct += int((predictions == sub.class_ids[list(idx)]).sum())
    return correct / len(sub)


@dataclass
class MetricsRecord:
    """One row of the training metrics CSV stream."""

    epoch: int
    phase: str
    loss: float
    acc_all: float | None = None
    acc_old: float | None = None
    acc_new: float | None = None
    wall_ms: float = 0.0


METRICS_COLUMNS = ["epoch", "phase", "loss", "acc_all", "acc_old", "acc_new", "wall_ms"]


def write_metrics_csv(records, path) -> None:
    """Append-style CSV of MetricsRecords; empty cells for absent accuracies."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.epoch,
                    r.phase,
                    f"{r.loss:.10g}",
                    "" if r.acc_all is None else f"{r.acc_all:.10g}",
                    "" if r.acc_old is None else f"{r.acc_old:.10g}",
                    "" if r.acc_new is None else f"{r.acc_new:.10g}",
                    f"{r.wall_ms:.3f}",
                ]
            )


def write_run_summary(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
