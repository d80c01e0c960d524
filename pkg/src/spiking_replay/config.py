"""Experiment configuration files, canonical hashing, and run manifests.

A single JSON file describes one experiment; the same file drives both the
``pretrain`` and ``continual`` commands. Schema (defaults in parentheses):

    {
      "seed": 7,
      "train_data": "data/train.spks",
      "test_data": "data/test.spks",
      "output_dir": "runs/demo",
      "checkpoint": "runs/demo/pretrained.ckpt",      # continual only
      "model": {
        "hidden_sizes": [200, 100, 50],               # output size comes from the data
        "alpha": 0.9, "beta": 0.8, "theta": 1.0,
        "surrogate_slope": 25.0
      },
      "training": {
        "eta": 0.001, "batch_size": 32, "optimizer": "adam",
      },
      "continual": {
        "kind": "sample_incremental",
        "pretrain_classes": null,                     # null = all
        "pretrain_scenarios": [0, ..., 10],
        "increments": [11],
        "replay_count": 2560,
        "per_class_quota": null,                      # multi_class_incremental
        "layer_index": 2,
        "codec": {"kind": "chunk_threshold", "ratio": 1, "threshold": 1},
        "epochs_pretrain": 50, "epochs_cl": 50
      }
    }

The config hash is the SHA-256 of the canonical (sorted-key, no-whitespace)
JSON encoding, so logically equal configs hash identically.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .continual import CLScenario
from .replay import CodecSpec
from .training import TrainConfig

PACKAGE_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def canonical_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ExperimentConfig:
    """Parsed experiment file plus the raw dict it hashed from."""

    seed: int
    train_data: Path
    test_data: Path
    output_dir: Path
    model: dict
    train_cfg: TrainConfig
    scenario: CLScenario | None
    checkpoint: Path | None
    raw: dict

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.raw)


def _expect(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return mapping[key]


def load_config(path, seed_override=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    try:
        return parse_config(raw)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: dict) -> ExperimentConfig:
    seed = int(_expect(raw, "seed", "config"))
    train_data = Path(_expect(raw, "train_data", "config"))
    test_data = Path(_expect(raw, "test_data", "config"))
    output_dir = Path(_expect(raw, "output_dir", "config"))
    model = dict(raw.get("model", {}))
    model.setdefault("hidden_sizes", [200, 100, 50])
    model.setdefault("alpha", 0.9)
    model.setdefault("beta", 0.8)
    model.setdefault("theta", 1.0)
    model.setdefault("surrogate_slope", 25.0)

    training = raw.get("training", {})
    train_cfg = TrainConfig(
        eta=float(training.get("eta", 1e-3)),
        batch_size=int(training.get("batch_size", 32)),
        optimizer=training.get("optimizer", "adam"),
        surrogate_slope=float(model["surrogate_slope"]),
        seed=seed,
    )

    scenario = None
    if "continual" in raw:
        section = raw["continual"]
        codec_raw = section.get("codec", {})
        codec = CodecSpec(
            kind=codec_raw.get("kind", "chunk_threshold"),
            ratio=int(codec_raw.get("ratio", 1)),
            threshold=int(codec_raw.get("threshold", 1)),
        )
        scenario = CLScenario(
            kind=_expect(section, "kind", "continual"),
            increments=list(_expect(section, "increments", "continual")),
            layer_index=int(section.get("layer_index", 1)),
            codec=codec,
            replay_count=int(section.get("replay_count", 0)),
            per_class_quota=section.get("per_class_quota"),
            pretrain_classes=section.get("pretrain_classes"),
            pretrain_scenarios=section.get("pretrain_scenarios"),
            epochs_pretrain=int(section.get("epochs_pretrain", 50)),
            epochs_cl=int(section.get("epochs_cl", 50)),
        )

    checkpoint = Path(raw["checkpoint"]) if "checkpoint" in raw else None
    return ExperimentConfig(
        seed=seed,
        train_data=train_data,
        test_data=test_data,
        output_dir=output_dir,
        model=model,
        train_cfg=train_cfg,
        scenario=scenario,
        checkpoint=checkpoint,
        raw=raw,
    )


@dataclass
class RunManifest:
    """Provenance record every artifact-producing command writes."""

    command: str
    config_hash: str
    seed: int
    version: str = PACKAGE_VERSION
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)

    def begin(self) -> "RunManifest":
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        return self

    def finish(self, outputs) -> "RunManifest":
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.outputs = [str(p) for p in outputs]
        return self

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(vars(self), indent=2, sort_keys=True) + "\n")
