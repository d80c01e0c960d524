"""Latent-replay capture, spike-train codecs, buffers, and byte-exact accounting.

Three lossy time-domain codecs:

* ``chunk_threshold``: split each neuron's T-step train into T/C_r chunks;
  a compressed step fires when the chunk's spike count reaches ``threshold``.
  Decompression interleaves zeros, placing the spike at the chunk's first
  timestep. One bit per compressed step.
* ``aggregate_count``: keep only the total spike count per neuron sequence
  (ceil(log2(T+1)) bits); expansion packs the spikes into the first timesteps.
* ``hybrid_count``: per-chunk spike counts (ceil(log2(C_r+1)) bits each);
  expansion packs each chunk's spikes at the chunk start.

Footprints are the pure payload closed forms; labels and headers are excluded
to match the published memory arithmetic.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neurons import Network
from .spikes import SpikeSet, SpikeTensor, pack
from .training import forward_batch

CHUNK_THRESHOLD = "chunk_threshold"
AGGREGATE_COUNT = "aggregate_count"
HYBRID_COUNT = "hybrid_count"
CODEC_KINDS = (CHUNK_THRESHOLD, AGGREGATE_COUNT, HYBRID_COUNT)


@dataclass(frozen=True)
class CodecSpec:
    """Compression settings: kind, time ratio C_r, and chunk spike threshold."""

    kind: str = CHUNK_THRESHOLD
    ratio: int = 1
    threshold: int = 1

    def __post_init__(self):
        if self.kind not in CODEC_KINDS:
            raise ValueError(f"unknown codec kind {self.kind!r}")
        if self.ratio < 1:
            raise ValueError("compression ratio must be at least 1")
        if self.kind == CHUNK_THRESHOLD and not (1 <= self.threshold <= self.ratio):
            raise ValueError("threshold must lie in [1, ratio]")


def _check_divisible(timesteps: int, ratio: int) -> None:
    if timesteps % ratio:
        raise ValueError(f"sequence length {timesteps} is not divisible by ratio {ratio}")


def compress_chunk_threshold(seq, ratio: int, threshold: int = 1) -> np.ndarray:
    """Threshold the spike count of every C_r-step chunk; works on [T] or [T x N]."""
    seq = np.asarray(seq)
    _check_divisible(seq.shape[0], ratio)
    sums = seq.reshape(seq.shape[0] // ratio, ratio, *seq.shape[1:]).sum(axis=1)
    return sums >= threshold


def decompress_chunk_threshold(comp, ratio: int) -> np.ndarray:
    """Interleave zeros back to full scale; spikes sit at each chunk's first step."""
    comp = np.asarray(comp, dtype=bool)
    out = np.zeros((comp.shape[0] * ratio, *comp.shape[1:]), dtype=bool)
    out[::ratio] = comp
    return out


def compress_aggregate(seq) -> int:
    """Total spike count of one sequence (stored in ceil(log2(T+1)) bits)."""
    return int(np.asarray(seq).sum())


def expand_aggregate(count: int, timesteps: int) -> np.ndarray:
    """Place ``count`` spikes at the first timesteps."""
    if count > timesteps:
        raise ValueError(f"count {count} exceeds sequence length {timesteps}")
    out = np.zeros(timesteps, dtype=bool)
    out[:count] = True
    return out


def compress_hybrid(seq, ratio: int) -> np.ndarray:
    """Per-chunk spike counts (each at most C_r, in ceil(log2(C_r+1)) bits)."""
    seq = np.asarray(seq)
    _check_divisible(seq.shape[0], ratio)
    return seq.reshape(seq.shape[0] // ratio, ratio, *seq.shape[1:]).sum(axis=1).astype(np.int64)


def expand_hybrid(counts, ratio: int) -> np.ndarray:
    """Place each chunk's count of spikes at the chunk start."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.max() > ratio:
        raise ValueError(f"chunk count exceeds ratio {ratio}")
    if counts.size and counts.min() < 0:
        raise ValueError("chunk counts must be non-negative")
    n_chunks = counts.shape[0]
    offsets = np.arange(ratio)
    if counts.ndim == 1:
        return (offsets[None, :] < counts[:, None]).reshape(n_chunks * ratio)
    # [chunks x N] counts -> [chunks x ratio x N] -> [T x N]
    mask = offsets[None, :, None] < counts[:, None, :]
    return mask.reshape(n_chunks * ratio, counts.shape[1])


def compress_tensor(tensor: SpikeTensor, codec: CodecSpec):
    """Codec payload for a whole tensor (compressed along time, per neuron)."""
    dense = tensor.to_dense()
    if codec.kind == CHUNK_THRESHOLD:
        return pack(compress_chunk_threshold(dense, codec.ratio, codec.threshold))
    if codec.kind == AGGREGATE_COUNT:
        return dense.sum(axis=0).astype(np.uint16)
    counts = compress_hybrid(dense, codec.ratio)
    return counts.astype(np.uint16)


def decompress_tensor(payload, codec: CodecSpec, timesteps: int, neurons: int) -> SpikeTensor:
    """Inverse mapping back to a full-scale [timesteps x neurons] SpikeTensor."""
    if codec.kind == CHUNK_THRESHOLD:
        return pack(decompress_chunk_threshold(payload.to_dense(), codec.ratio))
    if codec.kind == AGGREGATE_COUNT:
        counts = np.asarray(payload, dtype=np.int64)
        if counts.size and counts.max() > timesteps:
            raise ValueError(f"aggregate count exceeds sequence length {timesteps}")
        dense = np.arange(timesteps)[:, None] < counts[None, :]
        return pack(dense)
    return pack(expand_hybrid(np.asarray(payload, dtype=np.int64), codec.ratio))


class ReplayBuffer:
    """Per-class store of compressed latent spike tensors plus codec metadata."""

    def __init__(self, codec: CodecSpec, layer_index: int, neurons: int, timesteps: int):
        self.codec = codec
        self.layer_index = layer_index
        self.neurons = neurons
        self.timesteps = timesteps
        self.entries = {}  # class_id -> list of payloads

    def add(self, class_id: int, payload) -> None:
        self.entries.setdefault(int(class_id), []).append(payload)

    @property
    def n_entries(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def class_counts(self) -> dict:
        return {c: len(v) for c, v in sorted(self.entries.items())}

    def iter_entries(self):
        """Deterministic (class-sorted, insertion-ordered) payload iteration."""
        for class_id in sorted(self.entries):
            for payload in self.entries[class_id]:
                yield class_id, payload

    def footprint_bytes(self) -> float:
        return memory_footprint(self)

    def copy(self) -> "ReplayBuffer":
        out = ReplayBuffer(self.codec, self.layer_index, self.neurons, self.timesteps)
        out.entries = {c: list(v) for c, v in self.entries.items()}
        return out

    def __repr__(self) -> str:
        return (f"ReplayBuffer({self.n_entries} entries @ layer {self.layer_index}, "
                f"{self.codec.kind} 1:{self.codec.ratio}, {self.footprint_bytes():.0f} B)")


def capture_latents(frozen: Network, samples: SpikeSet, codec: CodecSpec,
                    batch_size: int = 64) -> ReplayBuffer:
    """Run the frozen layers over ``samples`` and store compressed activations.

    With an empty frozen network the raw inputs themselves are stored
    (naive rehearsal, layer index 0).
    """
    layer_index = frozen.n_layers
    neurons = frozen.output_size if frozen.layers else samples.neurons
    _check_divisible(samples.timesteps, codec.ratio)
    buffer = ReplayBuffer(codec, layer_index, neurons, samples.timesteps)
    for start in range(0, len(samples), batch_size):
        idx = range(start, min(start + batch_size, len(samples)))
        spikes = forward_batch(frozen, samples.dense_batch(idx))
        for row, i in enumerate(idx):
            tensor = pack(spikes[row])
            buffer.add(int(samples.class_ids[i]), compress_tensor(tensor, codec))
    return buffer


def _bits_per_entry(codec: CodecSpec, neurons: int, timesteps: int) -> int:
    if codec.kind == CHUNK_THRESHOLD:
        return neurons * (timesteps // codec.ratio)
    if codec.kind == AGGREGATE_COUNT:
        return neurons * int(timesteps).bit_length()  # == ceil(log2(T+1))
    return neurons * (timesteps // codec.ratio) * int(codec.ratio).bit_length()


def memory_footprint(buffer: ReplayBuffer) -> float:
    """Exact payload bytes of the buffer per the closed form (metadata excluded)."""
    bits = buffer.n_entries * _bits_per_entry(buffer.codec, buffer.neurons, buffer.timesteps)
    return bits / 8


def select_replay_samples(samples: SpikeSet, total: int, rng: np.random.Generator) -> SpikeSet:
    """Class-balanced uniform selection of ``total`` replay sources.

    The quota is split evenly over the classes present (remainder to the
    lowest class ids); classes short on samples contribute everything they have.
    """
    if total == 0 or len(samples) == 0:
        return samples.subset(indices=[])
    present = sorted(int(c) for c in np.unique(samples.class_ids))
    base, extra = divmod(total, len(present))
    chosen = []
    for rank, class_id in enumerate(present):
        quota = base + (1 if rank < extra else 0)
        pool = np.flatnonzero(samples.class_ids == class_id)
        take = min(quota, pool.size)
        chosen.extend(sorted(rng.choice(pool, size=take, replace=False).tolist()))
    return samples.subset(indices=chosen)


def mix_for_training(buffer: ReplayBuffer, new_latents, rng: np.random.Generator):
    """Decompress every replay entry, union with new activations, shuffle.

    ``new_latents`` is a list of (SpikeTensor, label); the result is a shuffled
    list of (SpikeTensor, label) at full time scale.
    """
    stream = []
    for class_id, payload in buffer.iter_entries():
        tensor = decompress_tensor(payload, buffer.codec, buffer.timesteps, buffer.neurons)
        stream.append((tensor, class_id))
    for tensor, label in new_latents:
        if tensor.timesteps != buffer.timesteps or tensor.neurons != buffer.neurons:
            raise ValueError(
                f"new latent shape {tensor.timesteps}x{tensor.neurons} does not match "
                f"replay shape {buffer.timesteps}x{buffer.neurons}"
            )
        stream.append((tensor, int(label)))
    order = rng.permutation(len(stream))
    return [stream[i] for i in order]


def buffer_extend(buffer: ReplayBuffer, new_entries: ReplayBuffer, per_class_quota: int) -> ReplayBuffer:
    """New buffer with up to ``per_class_quota`` entries per new class appended."""
    if (new_entries.codec != buffer.codec or new_entries.layer_index != buffer.layer_index
            or new_entries.neurons != buffer.neurons or new_entries.timesteps != buffer.timesteps):
        raise ValueError("buffer_extend requires matching codec, layer and shape")
    out = buffer.copy()
    for class_id in sorted(new_entries.entries):
        for payload in new_entries.entries[class_id][:per_class_quota]:
            out.add(class_id, payload)
    return out


def save_buffer(buffer: ReplayBuffer, path) -> None:
    """JSON header line + packed payload blob; roundtrips bit-exactly."""
    header = {
        "codec": {"kind": buffer.codec.kind, "ratio": buffer.codec.ratio,
                  "threshold": buffer.codec.threshold},
        "layer_index": buffer.layer_index,
        "neurons": buffer.neurons,
        "timesteps": buffer.timesteps,
        "class_counts": {str(c): n for c, n in buffer.class_counts().items()},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, payload in buffer.iter_entries():
            if buffer.codec.kind == CHUNK_THRESHOLD:
                fh.write(payload.bits.tobytes())
            else:
                fh.write(np.asarray(payload, dtype="<u2").tobytes())


def load_buffer(path) -> ReplayBuffer:
    raw = Path(path).read_bytes()
    head, _, blob = raw.partition(b"\n")
    header = json.loads(head.decode("utf-8"))
    codec = CodecSpec(**header["codec"])
    buffer = ReplayBuffer(codec, header["layer_index"], header["neurons"], header["timesteps"])
    n_comp = header["timesteps"] // codec.ratio
    offset = 0
    for class_key in sorted(header["class_counts"], key=int):
        for _ in range(header["class_counts"][class_key]):
            if codec.kind == CHUNK_THRESHOLD:
                nbytes = (n_comp * header["neurons"] + 7) // 8
                bits = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=offset)
                payload = SpikeTensor(n_comp, header["neurons"], bits)
                offset += nbytes
            elif codec.kind == AGGREGATE_COUNT:
                payload = np.frombuffer(blob, dtype="<u2", count=header["neurons"], offset=offset).copy()
                offset += 2 * header["neurons"]
            else:
                count = n_comp * header["neurons"]
                payload = np.frombuffer(blob, dtype="<u2", count=count, offset=offset)
                payload = payload.reshape(n_comp, header["neurons"]).copy()
                offset += 2 * count
            buffer.add(int(class_key), payload)
    if offset != len(blob):
        raise ValueError(f"buffer blob has {len(blob)} bytes, expected {offset}")
    return buffer
