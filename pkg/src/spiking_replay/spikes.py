"""Bit-packed spike tensors, labeled spike datasets, and the .spks file format.

A SpikeTensor stores a [timesteps x neurons] binary activation matrix packed
row-major by timestep into bytes: bit (t, n) lives at flat index
``t * neurons + n`` and flat index ``i`` is bit ``i % 8`` (least significant
first) of byte ``i // 8``. Padding to a byte boundary happens once per tensor,
never per row, so the payload is exactly ``ceil(timesteps * neurons / 8)``
bytes. That exactness is what the replay-memory accounting is built on.

File format (all integers little-endian):

    magic "SPKS" | version u16 | timesteps u32 | neurons u32 |
    num_classes u16 | num_scenarios u16 | sample_count u32 |
    per sample: class_id u16, scenario_id u16, payload bytes |
    CRC32 u32 over all preceding bytes

Human-readable class/scenario names never go in the binary file; writers may
emit an optional ``<path>.json`` sidecar next to it.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SPKS"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIIHHI")
_SAMPLE_HEAD = struct.Struct("<HH")
_CRC = struct.Struct("<I")


class SpikeSetFormatError(ValueError):
    """Malformed .spks data; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def payload_nbytes(timesteps: int, neurons: int) -> int:
    """Exact packed size of one tensor: ceil(timesteps * neurons / 8)."""
    return (timesteps * neurons + 7) // 8


class SpikeTensor:
    """Immutable bit-packed binary activation array over [timesteps x neurons]."""

    __slots__ = ("timesteps", "neurons", "bits")

    def __init__(self, timesteps: int, neurons: int, bits: np.ndarray):
        if timesteps < 1 or neurons < 1:
            raise ValueError("SpikeTensor dimensions must be at least 1")
        bits = np.asarray(bits, dtype=np.uint8)
        expected = payload_nbytes(timesteps, neurons)
        if bits.ndim != 1 or bits.size != expected:
            raise ValueError(f"payload must be exactly {expected} bytes, got {bits.size}")
        pad = 8 * expected - timesteps * neurons
        if pad and (int(bits[-1]) >> (8 - pad)):
            raise ValueError("padding bits past the last sample bit must be zero")
        bits = bits.copy()
        bits.setflags(write=False)
        self.timesteps = timesteps
        self.neurons = neurons
        self.bits = bits

    def get(self, t: int, n: int) -> bool:
        """Stored bit at (t, n)."""
        if not (0 <= t < self.timesteps and 0 <= n < self.neurons):
            raise IndexError(
                f"index ({t}, {n}) out of range for [{self.timesteps} x {self.neurons}]"
            )
        i = t * self.neurons + n
        return bool((int(self.bits[i >> 3]) >> (i & 7)) & 1)

    def to_dense(self) -> np.ndarray:
        """Unpack to a boolean [timesteps x neurons] matrix."""
        flat = np.unpackbits(self.bits, count=self.timesteps * self.neurons, bitorder="little")
        return flat.reshape(self.timesteps, self.neurons).astype(bool)

    def popcount(self) -> int:
        """Total number of set bits (pad bits are zero by construction)."""
        return int(np.unpackbits(self.bits).sum())

    @property
    def nbytes(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpikeTensor)
            and self.timesteps == other.timesteps
            and self.neurons == other.neurons
            and np.array_equal(self.bits, other.bits)
        )

    def __repr__(self) -> str:
        return f"SpikeTensor({self.timesteps}x{self.neurons}, {self.popcount()} spikes)"


def pack(dense) -> SpikeTensor:
    """Pack a boolean [timesteps x neurons] matrix into a SpikeTensor."""
    dense = np.asarray(dense)
    if dense.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {dense.shape}")
    timesteps, neurons = dense.shape
    if timesteps < 1 or neurons < 1:
        raise ValueError("matrix dimensions must be at least 1")
    if dense.dtype != bool:
        if not np.isin(dense, (0, 1)).all():
            raise ValueError("spike values must be boolean or 0/1")
        dense = dense.astype(bool)
    bits = np.packbits(dense.reshape(-1), bitorder="little")
    return SpikeTensor(timesteps, neurons, bits)


class SpikeSet:
    """Labeled dataset of equally shaped SpikeTensors with class/scenario tags.

    Subsets keep the declared ``num_classes`` / ``num_scenarios`` so labels
    retain their global meaning across continual-learning phases.
    """

    __slots__ = (
        "tensors",
        "class_ids",
        "scenario_ids",
        "num_classes",
        "num_scenarios",
        "timesteps",
        "neurons",
    )

    def __init__(
        self,
        tensors,
        class_ids,
        scenario_ids,
        num_classes: int,
        num_scenarios: int,
        timesteps: int | None = None,
        neurons: int | None = None,
    ):
        tensors = list(tensors)
        class_ids = np.asarray(class_ids, dtype=np.int64)
        scenario_ids = np.asarray(scenario_ids, dtype=np.int64)
        if not (len(tensors) == class_ids.size == scenario_ids.size):
            raise ValueError("tensors, class_ids and scenario_ids must have equal length")
        if num_classes < 1 or num_scenarios < 1:
            raise ValueError("num_classes and num_scenarios must be at least 1")
        if tensors:
            timesteps = tensors[0].timesteps if timesteps is None else timesteps
            neurons = tensors[0].neurons if neurons is None else neurons
        if timesteps is None or neurons is None:
            raise ValueError("empty SpikeSet needs declared timesteps and neurons")
        for i, tensor in enumerate(tensors):
            if tensor.timesteps != timesteps or tensor.neurons != neurons:
                raise ValueError(f"sample {i} has shape {tensor.timesteps}x{tensor.neurons}, "
                                 f"expected {timesteps}x{neurons}")
        if class_ids.size and (class_ids.min() < 0 or class_ids.max() >= num_classes):
            raise ValueError("class_id out of range")
        if scenario_ids.size and (scenario_ids.min() < 0 or scenario_ids.max() >= num_scenarios):
            raise ValueError("scenario_id out of range")
        self.tensors = tensors
        self.class_ids = class_ids
        self.scenario_ids = scenario_ids
        self.num_classes = num_classes
        self.num_scenarios = num_scenarios
        self.timesteps = timesteps
        self.neurons = neurons

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, i: int):
        return self.tensors[i], int(self.class_ids[i]), int(self.scenario_ids[i])

    def items(self):
        """(tensor, class label) pairs, the shape training streams expect."""
        return [(tensor, int(label)) for tensor, label in zip(self.tensors, self.class_ids)]

    def subset(self, classes=None, scenarios=None, indices=None) -> "SpikeSet":
        """Filtered copy; None filters keep everything."""
        keep = np.arange(len(self)) if indices is None else np.asarray(indices, dtype=np.int64)
        if classes is not None:
            keep = keep[np.isin(self.class_ids[keep], list(classes))]
        if scenarios is not None:
            keep = keep[np.isin(self.scenario_ids[keep], list(scenarios))]
        return SpikeSet(
            [self.tensors[i] for i in keep],
            self.class_ids[keep],
            self.scenario_ids[keep],
            self.num_classes,
            self.num_scenarios,
            self.timesteps,
            self.neurons,
        )

    def dense_batch(self, indices=None) -> np.ndarray:
        """Stacked boolean [n x timesteps x neurons] array for the given rows."""
        rows = range(len(self)) if indices is None else indices
        return np.stack([self.tensors[i].to_dense() for i in rows])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.class_ids, minlength=self.num_classes)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpikeSet)
            and self.num_classes == other.num_classes
            and self.num_scenarios == other.num_scenarios
            and self.timesteps == other.timesteps
            and self.neurons == other.neurons
            and np.array_equal(self.class_ids, other.class_ids)
            and np.array_equal(self.scenario_ids, other.scenario_ids)
            and all(a == b for a, b in zip(self.tensors, other.tensors))
        )

    def __repr__(self) -> str:
        return (f"SpikeSet({len(self)} samples, {self.timesteps}x{self.neurons}, "
                f"{self.num_classes} classes, {self.num_scenarios} scenarios)")


def save_spikeset(spikeset: SpikeSet, path, class_names=None, scenario_names=None) -> None:
    """Write the binary format; optionally emit a ``<path>.json`` name sidecar."""
    path = Path(path)
    blob = bytearray()
    blob += _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        spikeset.timesteps,
        spikeset.neurons,
        spikeset.num_classes,
        spikeset.num_scenarios,
        len(spikeset),
    )
    for tensor, class_id, scenario_id in spikeset:
        blob += _SAMPLE_HEAD.pack(class_id, scenario_id)
        blob += tensor.bits.tobytes()
    blob += _CRC.pack(zlib.crc32(bytes(blob)))
    path.write_bytes(bytes(blob))
    if class_names is not None or scenario_names is not None:
        sidecar = {"class_names": class_names, "scenario_names": scenario_names}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def load_spikeset(path) -> SpikeSet:
    """Read and validate a .spks file; raises SpikeSetFormatError with an offset."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + _CRC.size:
        raise SpikeSetFormatError("file truncated before header", len(raw))
    magic, version, timesteps, neurons, num_classes, num_scenarios, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SpikeSetFormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise SpikeSetFormatError(f"unsupported version {version}", 4)
    if timesteps < 1 or neurons < 1:
        raise SpikeSetFormatError("declared dimensions must be at least 1", 6)

    (stored_crc,) = _CRC.unpack_from(raw, len(raw) - _CRC.size)
    actual_crc = zlib.crc32(raw[: -_CRC.size])
    if stored_crc != actual_crc:
        raise SpikeSetFormatError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            len(raw) - _CRC.size,
        )

    nbytes = payload_nbytes(timesteps, neurons)
    offset = _HEADER.size
    tensors, class_ids, scenario_ids = [], [], []
    for i in range(count):
        if offset + _SAMPLE_HEAD.size + nbytes > len(raw) - _CRC.size:
            raise SpikeSetFormatError(f"file truncated inside sample {i}", offset)
        class_id, scenario_id = _SAMPLE_HEAD.unpack_from(raw, offset)
        if class_id >= num_classes:
            raise SpikeSetFormatError(f"sample {i} class_id {class_id} >= {num_classes}", offset)
        if scenario_id >= num_scenarios:
            raise SpikeSetFormatError(
                f"sample {i} scenario_id {scenario_id} >= {num_scenarios}", offset + 2
            )
        offset += _SAMPLE_HEAD.size
        payload = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=offset)
        try:
            tensors.append(SpikeTensor(timesteps, neurons, payload))
        except ValueError as exc:
            raise SpikeSetFormatError(f"sample {i}: {exc}", offset) from exc
        offset += nbytes
        class_ids.append(class_id)
        scenario_ids.append(scenario_id)
    if offset != len(raw) - _CRC.size:
        raise SpikeSetFormatError("trailing bytes after last sample", offset)

    return SpikeSet(tensors, class_ids, scenario_ids, num_classes, num_scenarios,
                    timesteps, neurons)
