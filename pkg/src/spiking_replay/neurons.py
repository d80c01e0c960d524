"""Recurrent second-order LIF layers and networks.

Discrete-time update, per layer and timestep (soft reset by threshold
subtraction, gated by the previous output spike):

    syn' = alpha * syn + W @ x_t + V @ s_prev
    mem' = beta * mem + syn' - theta * s_prev
    s_t  = [mem' >= theta]

Layers and networks are plain containers of numpy arrays. Forward simulation
is deterministic: identical (weights, input, state) give bit-identical spike
outputs. Training rebinds the weight arrays in place of the layer objects, so
a split network shares parameters with the network it came from.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spikes import SpikeTensor, pack


class NumericError(RuntimeError):
    """Non-finite value encountered during simulation or training."""


@dataclass
class RecurrentLayer:
    """One layer of synaptic-conductance LIF neurons with intra-layer feedback.

    ``W`` is [out x in] feed-forward, ``V`` is [out x out] recurrent. A layer
    built with ``recurrent=False`` keeps V pinned to zero (the output layer of
    a classification network has no feedback connections).
    """

    W: np.ndarray
    V: np.ndarray
    alpha: float = 0.9
    beta: float = 0.8
    theta: float = 1.0
    recurrent: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a 2-D [out x in] matrix")
        out = self.W.shape[0]
        if self.V.shape != (out, out):
            raise ValueError(f"V must be square [{out} x {out}], got {self.V.shape}")
        if not (0.0 <= self.alpha < 1.0 and 0.0 <= self.beta < 1.0):
            raise ValueError("alpha and beta must lie in [0, 1)")
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if not self.recurrent and np.any(self.V):
            raise ValueError("non-recurrent layer must have zero V")

    @property
    def in_size(self) -> int:
        return self.W.shape[1]

    @property
    def out_size(self) -> int:
        return self.W.shape[0]


@dataclass
class LayerState:
    """Per-neuron simulation state: synaptic current, membrane, last spikes."""

    syn: np.ndarray
    mem: np.ndarray
    spk_prev: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "LayerState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool))

    def reset(self) -> None:
        self.syn = np.zeros_like(self.syn)
        self.mem = np.zeros_like(self.mem)
        self.spk_prev = np.zeros_like(self.spk_prev)


@dataclass
class Network:
    """Ordered layer stack; ``split_index`` marks the frozen/learning boundary."""

    layers: list = field(default_factory=list)
    split_index: int = 0

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_size != b.in_size:
                raise ValueError(
                    f"layer output size {a.out_size} does not feed layer input size {b.in_size}"
                )
        limit = len(self.layers) if self.layers else 1
        if not (0 <= self.split_index < limit):
            raise ValueError(f"split_index must be in [0, {limit}), got {self.split_index}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_size(self) -> int:
        return self.layers[0].in_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].out_size


def layer_step(layer: RecurrentLayer, x_t, state: LayerState):
    """Advance one layer a single timestep; returns (spikes, new state)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (layer.in_size,):
        raise ValueError(f"input must have shape ({layer.in_size},), got {x_t.shape}")
    if not (np.isfinite(state.syn).all() and np.isfinite(state.mem).all()):
        raise NumericError("layer state is not finite")
    syn = layer.alpha * state.syn + layer.W @ x_t + layer.V @ state.spk_prev
    mem = layer.beta * state.mem + syn - layer.theta * np.asarray(state.spk_prev, dtype=np.float64)
    if not (np.isfinite(syn).all() and np.isfinite(mem).all()):
        raise NumericError("layer state became non-finite")
    spikes = mem >= layer.theta
    return spikes, LayerState(syn, mem, spikes)


def layer_forward(layer: RecurrentLayer, spikes_in: SpikeTensor) -> SpikeTensor:
    """Run one layer over a full spike train from zeroed state."""
    if spikes_in.neurons != layer.in_size:
        raise ValueError(
            f"input has {spikes_in.neurons} neurons, layer expects {layer.in_size}"
        )
    dense = spikes_in.to_dense()
    state = LayerState.zeros(layer.out_size)
    out = np.zeros((spikes_in.timesteps, layer.out_size), dtype=bool)
    for t in range(spikes_in.timesteps):
        out[t], state = layer_step(layer, dense[t], state)
    return pack(out)


def network_forward(net: Network, spikes_in: SpikeTensor) -> list:
    """Chained layer_forward; element K-1 is the latent-replay capture point."""
    outputs = []
    current = spikes_in
    for layer in net.layers:
        current = layer_forward(layer, current)
        outputs.append(current)
    return outputs


def split_network(net: Network, split_index: int | None = None):
    """Split into (frozen, learning) networks that share layer objects.

    ``split_index == 0`` leaves the frozen part empty (the naive-rehearsal
    baseline where raw inputs are replayed).
    """
    k = net.split_index if split_index is None else split_index
    if not (0 <= k < net.n_layers):
        raise ValueError(f"split index must be in [0, {net.n_layers}), got {k}")
    return Network(net.layers[:k]), Network(net.layers[k:])


def build_network(
    input_size: int,
    layer_sizes,
    rng: np.random.Generator,
    alpha: float = 0.9,
    beta: float = 0.8,
    theta: float = 1.0,
    split_index: int = 0,
) -> Network:
    """Random-normal initialized network; hidden layers recurrent, output not.

    W entries are N(0, 1/sqrt(fan_in)), V entries N(0, 1/sqrt(out)) * 0.5;
    draws happen layer by layer (W then V) from the supplied generator.
    """
    layers = []
    sizes = [input_size] + list(layer_sizes)
    last = len(layer_sizes) - 1
    for i, (fan_in, out) in enumerate(zip(sizes, sizes[1:])):
        W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(out, fan_in))
        if i == last:
            V = np.zeros((out, out))
            layers.append(RecurrentLayer(W, V, alpha, beta, theta, recurrent=False))
        else:
            V = rng.normal(0.0, 0.5 / np.sqrt(out), size=(out, out))
            layers.append(RecurrentLayer(W, V, alpha, beta, theta, recurrent=True))
    return Network(layers, split_index)


def save_network(net: Network, path, extra: dict | None = None) -> None:
    """Checkpoint: one JSON manifest line, then per layer raw float64 LE blobs, W then V."""
    manifest = {
        "input_size": net.input_size,
        "layer_sizes": [layer.out_size for layer in net.layers],
        "alpha": [layer.alpha for layer in net.layers],
        "beta": [layer.beta for layer in net.layers],
        "theta": [layer.theta for layer in net.layers],
        "recurrent": [layer.recurrent for layer in net.layers],
        "split_index": net.split_index,
    }
    if extra:
        manifest.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for layer in net.layers:
            fh.write(layer.W.astype("<f8").tobytes())
            fh.write(layer.V.astype("<f8").tobytes())


def load_network(path):
    """Inverse of save_network; returns (network, manifest dict)."""
    raw = Path(path).read_bytes()
    header, _, blob = raw.partition(b"\n")
    manifest = json.loads(header.decode("utf-8"))
    sizes = [manifest["input_size"]] + list(manifest["layer_sizes"])
    layers = []
    offset = 0
    for i, (fan_in, out) in enumerate(zip(sizes, sizes[1:])):
        w_bytes = out * fan_in * 8
        v_bytes = out * out * 8
        W = np.frombuffer(blob, dtype="<f8", count=out * fan_in, offset=offset).reshape(out, fan_in)
        offset += w_bytes
        V = np.frombuffer(blob, dtype="<f8", count=out * out, offset=offset).reshape(out, out)
        offset += v_bytes
        layers.append(
            RecurrentLayer(
                W.copy(),
                V.copy(),
                manifest["alpha"][i],
                manifest["beta"][i],
                manifest["theta"][i],
                recurrent=manifest["recurrent"][i],
            )
        )
    if offset != len(blob):
        raise ValueError(f"checkpoint blob has {len(blob)} bytes, expected {offset}")
    return Network(layers, manifest.get("split_index", 0)), manifest
