"""Convert the SHD dataset's HDF5 distribution into the SpikeSet binary format.

SHD ships sparse events per sample: ``spikes/units`` (neuron index, < 700) and
``spikes/times`` (seconds), with ``labels`` (0..19) and ``extra/speaker``
(0..11). Each sample becomes a [bins x 700] binary tensor: the sample's own
duration is split into ``bins`` equal windows (delta = max event time / bins)
and bin b of neuron n is set when at least one event of unit n falls inside
[b*delta, (b+1)*delta). An event sitting exactly on the final edge lands in
the last bin; multiple events in one bin collapse to a single spike. Samples
without events become all-zero tensors.

Output wire format (spiking-replay SpikeSet, all little-endian): magic "SPKS",
version u16, timesteps u32, neurons u32, num_classes u16, num_scenarios u16,
sample_count u32; per sample class_id u16, scenario_id u16, then the
bit-packed payload (flat bit t*700+n, least significant bit first, padded to
a byte boundary per tensor); trailing CRC32 over everything before it.

Exit codes mirror the spiking-replay CLI: 0 success, 2 usage or data errors.
"""

import argparse
import struct
import sys
import zlib
from pathlib import Path

import h5py
import numpy as np

NEURONS = 700
NUM_CLASSES = 20
NUM_SPEAKERS = 12

MAGIC = b"SPKS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIHHI")
_SAMPLE_HEAD = struct.Struct("<HH")


class DataError(ValueError):
    """Malformed input events (bad unit, label, or speaker)."""


def bin_events(units, times, bins: int) -> np.ndarray:
    """Collapse one sample's events into a [bins x 700] boolean matrix."""
    dense = np.zeros((bins, NEURONS), dtype=bool)
    units = np.asarray(units, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    if units.size == 0:
        return dense
    max_time = float(times.max())
    if max_time <= 0.0:
        rows = np.zeros(units.size, dtype=np.int64)
    else:
        delta = max_time / bins
        rows = np.minimum((times / delta).astype(np.int64), bins - 1)
    dense[rows, units] = True
    return dense


def pack_bits(dense: np.ndarray) -> bytes:
    """Row-major bit packing, least significant bit first, zero padded."""
    return np.packbits(dense.reshape(-1), bitorder="little").tobytes()


def convert(input_h5, output_spikeset, bins: int = 100) -> int:
    """Convert every sample; returns the number written."""
    with h5py.File(input_h5, "r") as fh:
        for field in ("spikes/units", "spikes/times", "labels", "extra/speaker"):
            if field not in fh:
                raise DataError(f"input is missing the {field!r} field")
        all_units = fh["spikes/units"]
        all_times = fh["spikes/times"]
        labels = np.asarray(fh["labels"], dtype=np.int64)
        speakers = np.asarray(fh["extra/speaker"], dtype=np.int64)
        n_samples = labels.size
        if not (len(all_units) == len(all_times) == speakers.size == n_samples):
            raise DataError("units/times/labels/speaker lengths disagree")

        blob = bytearray()
        blob += _HEADER.pack(MAGIC, FORMAT_VERSION, bins, NEURONS,
                             NUM_CLASSES, NUM_SPEAKERS, n_samples)
        for i in range(n_samples):
            units = np.asarray(all_units[i], dtype=np.int64)
            if units.size and (units.min() < 0 or units.max() >= NEURONS):
                raise DataError(f"sample {i}: unit index outside [0, {NEURONS})")
            if not (0 <= labels[i] < NUM_CLASSES):
                raise DataError(f"sample {i}: label {labels[i]} outside [0, {NUM_CLASSES})")
            if not (0 <= speakers[i] < NUM_SPEAKERS):
                raise DataError(f"sample {i}: speaker {speakers[i]} outside [0, {NUM_SPEAKERS})")
            dense = bin_events(units, all_times[i], bins)
            blob += _SAMPLE_HEAD.pack(int(labels[i]), int(speakers[i]))
            blob += pack_bits(dense)
        blob += struct.pack("<I", zlib.crc32(bytes(blob)))

    Path(output_spikeset).write_bytes(bytes(blob))
    return n_samples


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shd-convert",
        description="Convert an SHD HDF5 file into the SpikeSet binary format.",
    )
    parser.add_argument("input_h5")
    parser.add_argument("output_spikeset")
    parser.add_argument("--bins", type=int, default=100,
                        help="timesteps per sample (default 100)")
    args = parser.parse_args(argv)
    if args.bins < 1:
        print("error: --bins must be at least 1", file=sys.stderr)
        return 2
    try:
        count = convert(args.input_h5, args.output_spikeset, args.bins)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} samples ({args.bins}x{NEURONS}) to {args.output_spikeset}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
