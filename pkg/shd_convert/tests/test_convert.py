"""Converter acceptance: hand-binned fixtures, validation, primary-CLI load check."""

import os
import struct
import subprocess
import sys
import zlib
from pathlib import Path

import h5py
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from shd_convert import NEURONS, main


def write_fixture(path, samples):
    """samples: list of (units, times, label, speaker)."""
    vlen_int = h5py.special_dtype(vlen=np.dtype("int64"))
    vlen_float = h5py.special_dtype(vlen=np.dtype("float64"))
    with h5py.File(path, "w") as fh:
        spikes = fh.create_group("spikes")
        units = spikes.create_dataset("units", (len(samples),), dtype=vlen_int)
        times = spikes.create_dataset("times", (len(samples),), dtype=vlen_float)
        for i, (u, t, _, _) in enumerate(samples):
            units[i] = np.asarray(u, dtype=np.int64)
            times[i] = np.asarray(t, dtype=np.float64)
        fh.create_dataset("labels", data=np.array([s[2] for s in samples], dtype=np.int64))
        fh.create_group("extra").create_dataset(
            "speaker", data=np.array([s[3] for s in samples], dtype=np.int64))


def read_spikeset(path):
    """Minimal independent .spks reader: header fields plus dense sample bits."""
    raw = Path(path).read_bytes()
    magic, version, bins, neurons, n_class, n_scene, count = struct.unpack_from(
        "<4sHIIHHI", raw, 0)
    assert magic == b"SPKS" and version == 1
    assert zlib.crc32(raw[:-4]) == struct.unpack_from("<I", raw, len(raw) - 4)[0]
    payload = (bins * neurons + 7) // 8
    offset = 22
    samples = []
    for _ in range(count):
        class_id, scenario_id = struct.unpack_from("<HH", raw, offset)
        offset += 4
        bits = np.frombuffer(raw, dtype=np.uint8, count=payload, offset=offset)
        offset += payload
        dense = np.unpackbits(bits, count=bins * neurons, bitorder="little")
        samples.append((dense.reshape(bins, neurons).astype(bool), class_id, scenario_id))
    return {"bins": bins, "neurons": neurons, "n_class": n_class,
            "n_scene": n_scene, "samples": samples}


THREE_SAMPLES = [
    ([], [], 0, 0),                                             # no events
    ([5], [0.0], 3, 1),                                         # single event at t=0
    ([0, 1, 1, 699], [0.0, 0.35, 0.37, 1.0], 19, 11),           # multi-event
]


def test_three_sample_fixture_matches_hand_binning(tmp_path):
    fixture = tmp_path / "three.h5"
    out = tmp_path / "three.spks"
    write_fixture(fixture, THREE_SAMPLES)
    assert main([str(fixture), str(out), "--bins", "10"]) == 0

    decoded = read_spikeset(out)
    assert decoded["bins"] == 10 and decoded["neurons"] == NEURONS
    assert decoded["n_class"] == 20 and decoded["n_scene"] == 12

    zero, single, multi = decoded["samples"]
    assert not zero[0].any() and zero[1:] == (0, 0)

    expected_single = np.zeros((10, NEURONS), dtype=bool)
    expected_single[0, 5] = True  # max_time 0 collapses everything into bin 0
    assert np.array_equal(single[0], expected_single)
    assert single[1:] == (3, 1)

    # hand binning, delta = 1.0 / 10: t=0 -> bin 0, 0.35/0.37 -> bin 3 (one
    # spike), t=1.0 sits on the final edge -> clamped to bin 9
    expected_multi = np.zeros((10, NEURONS), dtype=bool)
    expected_multi[0, 0] = True
    expected_multi[3, 1] = True
    expected_multi[9, 699] = True
    assert np.array_equal(multi[0], expected_multi)
    assert multi[1:] == (19, 11)


def test_default_hundred_bins(tmp_path):
    fixture = tmp_path / "one.h5"
    out = tmp_path / "one.spks"
    write_fixture(fixture, [([5, 20], [0.0, 2.0], 7, 4)])
    assert main([str(fixture), str(out)]) == 0
    decoded = read_spikeset(out)
    assert decoded["bins"] == 100
    dense = decoded["samples"][0][0]
    assert dense[0, 5] and dense[99, 20]
    assert dense.sum() == 2


def test_primary_cli_loads_converted_file(tmp_path):
    fixture = tmp_path / "three.h5"
    out = tmp_path / "three.spks"
    write_fixture(fixture, THREE_SAMPLES)
    assert main([str(fixture), str(out), "--bins", "10"]) == 0
    proc = subprocess.run(
        [sys.executable, "-m", "spiking_replay", "convert-check", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert '"samples": 3' in proc.stdout


def test_unit_out_of_range_reports_sample_index(tmp_path, capsys):
    fixture = tmp_path / "bad.h5"
    write_fixture(fixture, [([5], [0.0], 0, 0), ([700], [0.1], 1, 1)])
    assert main([str(fixture), str(tmp_path / "bad.spks")]) == 2
    err = capsys.readouterr().err
    assert "sample 1" in err and "unit" in err


def test_label_and_speaker_validation(tmp_path, capsys):
    fixture = tmp_path / "badlabel.h5"
    write_fixture(fixture, [([5], [0.0], 20, 0)])
    assert main([str(fixture), str(tmp_path / "x.spks")]) == 2
    assert "label" in capsys.readouterr().err

    fixture2 = tmp_path / "badspeaker.h5"
    write_fixture(fixture2, [([5], [0.0], 0, 12)])
    assert main([str(fixture2), str(tmp_path / "y.spks")]) == 2
    assert "speaker" in capsys.readouterr().err


def test_missing_field_exits_nonzero(tmp_path, capsys):
    fixture = tmp_path / "missing.h5"
    with h5py.File(fixture, "w") as fh:
        fh.create_dataset("labels", data=np.array([0]))
    assert main([str(fixture), str(tmp_path / "z.spks")]) == 2
    assert "missing" in capsys.readouterr().err


def test_missing_input_file(tmp_path, capsys):
    assert main([str(tmp_path / "nope.h5"), str(tmp_path / "out.spks")]) == 2


SHD_H5 = os.environ.get("SHD_TRAIN_H5")


@pytest.mark.skipif(not SHD_H5, reason="set SHD_TRAIN_H5 to convert the real SHD train split")
def test_full_shd_train_split(tmp_path):
    out = tmp_path / "shd_train.spks"
    assert main([SHD_H5, str(out)]) == 0
    decoded = read_spikeset(out)
    classes = {c for _, c, _ in decoded["samples"]}
    speakers = {s for _, _, s in decoded["samples"]}
    assert len(decoded["samples"]) > 8000
    assert len(classes) == 20
    assert len(speakers) >= 10
