"""End-to-end continual-learning protocols over replay buffers.

Pipeline (for each protocol kind): pretrain on the filtered subset, split the
network at layer K, capture class-balanced latent replays, then for every
scheduled increment train only the learning layers on the union of fresh
latent activations and decompressed replays. Class-incremental modes redraw
the new class's output weights first; multi-class mode also grows the buffer
with the new class's replays after each step.

Forgetting is measured per step against the old-subset accuracy recorded
immediately before that step (before any re-initialization), matching a
per-step "average forgetting" reading.
"""

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .neurons import Network, split_network
from .replay import (
    CodecSpec,
    ReplayBuffer,
    buffer_extend,
    capture_latents,
    memory_footprint,
    mix_for_training,
    select_replay_samples,
)
from .seeding import substream
from .spikes import SpikeSet, pack
from .training import MetricsRecord, TrainConfig, evaluate, forward_batch, train_epochs

SAMPLE_INCREMENTAL = "sample_incremental"
CLASS_INCREMENTAL = "class_incremental"
MULTI_CLASS_INCREMENTAL = "multi_class_incremental"
SCENARIO_KINDS = (SAMPLE_INCREMENTAL, CLASS_INCREMENTAL, MULTI_CLASS_INCREMENTAL)


@dataclass
class CLScenario:
    """Full description of one continual-learning experiment."""

    kind: str
    increments: list
    layer_index: int = 1
    codec: CodecSpec = field(default_factory=CodecSpec)
    replay_count: int = 0
    per_class_quota: int | None = None
    pretrain_classes: list | None = None
    pretrain_scenarios: list | None = None
    epochs_pretrain: int = 50
    epochs_cl: int = 50

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.increments:
            raise ValueError("increment schedule must be nonempty")
        if self.kind == SAMPLE_INCREMENTAL:
            if self.pretrain_scenarios is None:
                raise ValueError("sample_incremental needs pretrain_scenarios")
            overlap = set(self.increments) & set(self.pretrain_scenarios)
        else:
            if self.pretrain_classes is None:
                raise ValueError(f"{self.kind} needs pretrain_classes")
            overlap = set(self.increments) & set(self.pretrain_classes)
        if overlap:
            raise ValueError(f"increment ids {sorted(overlap)} overlap the pretraining subset")
        if self.kind == MULTI_CLASS_INCREMENTAL and not self.per_class_quota:
            raise ValueError("multi_class_incremental needs per_class_quota")
        if self.replay_count < 0 or self.layer_index < 0:
            raise ValueError("replay_count and layer_index must be non-negative")
        if self.epochs_pretrain < 0 or self.epochs_cl < 1:
            raise ValueError("epochs_pretrain must be >= 0 and epochs_cl >= 1")

    def increments_are_classes(self) -> bool:
        return self.kind != SAMPLE_INCREMENTAL


@dataclass
class CLReportRow:
    """One CL epoch: accuracies, forgetting vs the step baseline, buffer size."""

    step: int
    epoch: int
    acc_full: float
    acc_old: float
    acc_new: float
    forgetting: float
    replay_bytes: float
    wall_ms: float


CL_REPORT_COLUMNS = ["step", "epoch", "acc_full", "acc_old", "acc_new",
                     "forgetting", "replay_bytes", "wall_ms"]


@dataclass
class CLStepSummary:
    step: int
    increment_id: int
    acc_old_before: float
    acc_full: float
    acc_old: float
    acc_new: float
    forgetting: float
    replay_bytes: float


@dataclass
class CLReport:
    rows: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    baselines: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CL_REPORT_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [r.step, r.epoch, f"{r.acc_full:.10g}", f"{r.acc_old:.10g}",
                     f"{r.acc_new:.10g}", f"{r.forgetting:.10g}",
                     f"{r.replay_bytes:.10g}", f"{r.wall_ms:.3f}"]
                )

    def summary(self) -> dict:
        return {
            "baselines": self.baselines,
            "steps": [vars(s) for s in self.steps],
            "final": vars(self.steps[-1]) if self.steps else None,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def forgetting(acc_old_before: float, acc_old_after: float) -> float:
    """Positive when old-subset accuracy dropped; negative is backward transfer."""
    return acc_old_before - acc_old_after


@dataclass
class PretrainResult:
    history: list
    records: list
    baselines: dict


def pretrain(net: Network, scenario: CLScenario, cfg: TrainConfig,
             train: SpikeSet, test: SpikeSet, epoch_hook=None) -> PretrainResult:
    """Train the whole network on the pretraining subset and record baselines.

    Per-epoch records carry test accuracy on the full set, the pretraining
    ("old") subset, and the increment ("new") subset.
    """
    sub = train.subset(classes=scenario.pretrain_classes, scenarios=scenario.pretrain_scenarios)
    if len(sub) == 0:
        raise ValueError("pretraining subset is empty")
    old_filter, new_filter = _eval_filters(scenario, learned=None)
    records = []

    def hook(metrics):
        record = MetricsRecord(
            epoch=metrics.epoch,
            phase="pretrain",
            loss=metrics.loss,
            acc_all=evaluate(net, test),
            acc_old=evaluate(net, test, **old_filter),
            acc_new=evaluate(net, test, **new_filter),
            wall_ms=metrics.wall_ms,
        )
        records.append(record)
        if epoch_hook is not None:
            epoch_hook(record)

    history = train_epochs(net, sub.items(), replace(cfg, epochs=scenario.epochs_pretrain),
                           rng=substream(cfg.seed, "shuffle", "pretrain"), epoch_hook=hook)
    baselines = {
        "acc_full": evaluate(net, test),
        "acc_old": evaluate(net, test, **old_filter),
        "acc_new": evaluate(net, test, **new_filter),
    }
    return PretrainResult(history, records, baselines)


def reinit_new_class(net: Network, class_id: int, seed: int) -> Network:
    """Redraw the new class's output-neuron weights from the old weights' stats.

    The feed-forward row (and, when the output layer is recurrent, its V row
    and column) is resampled from Normal(mean, std) of all *other* output-layer
    feed-forward weights. Every other parameter is untouched.
    """
    layer = net.layers[-1]
    n_out = layer.out_size
    if not (0 <= class_id < n_out):
        raise ValueError(f"class_id {class_id} out of range for {n_out} outputs")
    if n_out < 2:
        raise ValueError("cannot estimate statistics from a single-class output layer")
    others = np.delete(layer.W, class_id, axis=0)
    mu = float(others.mean())
    sigma = float(others.std())
    rng = substream(seed, "reinit", class_id)
    W = layer.W.copy()
    W[class_id] = rng.normal(mu, sigma, size=layer.in_size)
    layer.W = W
    if layer.recurrent:
        V = layer.V.copy()
        V[class_id, :] = rng.normal(mu, sigma, size=n_out)
        V[:, class_id] = rng.normal(mu, sigma, size=n_out)
        layer.V = V
    return net


def _eval_filters(scenario: CLScenario, learned) -> tuple:
    """(old, new) evaluate() keyword filters for the current step.

    ``learned`` is the set of ids mastered so far (None means the pretraining
    subset only); "old" covers everything learned, "new" the remaining
    increment ids.
    """
    if scenario.increments_are_classes():
        base = list(scenario.pretrain_classes)
        key = "classes"
    else:
        base = list(scenario.pretrain_scenarios)
        key = "scenarios"
    learned = base if learned is None else sorted(learned)
    remaining = [i for i in scenario.increments if i not in learned]
    new = remaining if remaining else list(scenario.increments)
    return {key: learned}, {key: new}


def latent_activations(frozen: Network, samples: SpikeSet, batch_size: int = 64) -> list:
    """Frozen-forward activations as (SpikeTensor, label) pairs, uncompressed."""
    out = []
    for start in range(0, len(samples), batch_size):
        idx = range(start, min(start + batch_size, len(samples)))
        spikes = forward_batch(frozen, samples.dense_batch(idx))
        for row, i in enumerate(idx):
            out.append((pack(spikes[row]), int(samples.class_ids[i])))
    return out


def run_increment(net: Network, buffer: ReplayBuffer, new_data: SpikeSet,
                  scenario: CLScenario, cfg: TrainConfig, test: SpikeSet,
                  step: int, increment_id: int, learned) -> tuple:
    """One CL step: mix replays with new latents, train the learning layers.

    Returns (buffer, rows, summary); the network is updated in place and the
    frozen layers stay bit-identical. Multi-class mode appends the new class's
    replays to the buffer afterwards.
    """
    frozen, learning = split_network(net, scenario.layer_index)
    old_filter, _ = _eval_filters(scenario, learned)
    new_key = "classes" if scenario.increments_are_classes() else "scenarios"
    new_filter = {new_key: [increment_id]}
    acc_old_before = evaluate(net, test, **old_filter)

    if scenario.increments_are_classes():
        reinit_new_class(net, increment_id, cfg.seed)

    new_latents = latent_activations(frozen, new_data)
    stream = mix_for_training(buffer, new_latents, substream(cfg.seed, "mix", f"step-{step}"))
    replay_bytes = memory_footprint(buffer)
    rows = []

    def hook(metrics):
        acc_old = evaluate(net, test, **old_filter)
        rows.append(
            CLReportRow(
                step=step,
                epoch=metrics.epoch,
                acc_full=evaluate(net, test),
                acc_old=acc_old,
                acc_new=evaluate(net, test, **new_filter),
                forgetting=forgetting(acc_old_before, acc_old),
                replay_bytes=replay_bytes,
                wall_ms=metrics.wall_ms,
            )
        )

    train_epochs(learning, stream, replace(cfg, epochs=scenario.epochs_cl),
                 rng=substream(cfg.seed, "shuffle", f"step-{step}"), epoch_hook=hook)

    if scenario.kind == MULTI_CLASS_INCREMENTAL:
        picked = select_replay_samples(
            new_data, scenario.per_class_quota,
            substream(cfg.seed, "replay-select", f"step-{step}"),
        )
        fresh = capture_latents(frozen, picked, scenario.codec)
        buffer = buffer_extend(buffer, fresh, scenario.per_class_quota)

    last = rows[-1]
    summary = CLStepSummary(step, increment_id, acc_old_before, last.acc_full,
                            last.acc_old, last.acc_new, last.forgetting,
                            memory_footprint(buffer))
    return buffer, rows, summary


def run_protocol(scenario: CLScenario, cfg: TrainConfig, train: SpikeSet, test: SpikeSet,
                 net: Network, skip_pretrain: bool = False, step_hook=None) -> CLReport:
    """Execute the full protocol on ``net`` (updated in place).

    ``skip_pretrain`` starts from the provided weights (a loaded checkpoint)
    and only re-measures the baselines. ``step_hook(step, net, buffer)`` runs
    after every increment (checkpointing).
    """
    report = CLReport()
    if skip_pretrain:
        old_filter, new_filter = _eval_filters(scenario, learned=None)
        report.baselines = {
            "acc_full": evaluate(net, test),
            "acc_old": evaluate(net, test, **old_filter),
            "acc_new": evaluate(net, test, **new_filter),
        }
    else:
        result = pretrain(net, scenario, cfg, train, test)
        report.baselines = result.baselines

    pretrain_sub = train.subset(classes=scenario.pretrain_classes,
                                scenarios=scenario.pretrain_scenarios)
    frozen, _ = split_network(net, scenario.layer_index)
    sources = select_replay_samples(pretrain_sub, scenario.replay_count,
                                    substream(cfg.seed, "replay-select"))
    buffer = capture_latents(frozen, sources, scenario.codec)

    learned = set(scenario.pretrain_classes if scenario.increments_are_classes()
                  else scenario.pretrain_scenarios)
    for step, increment_id in enumerate(scenario.increments):
        if scenario.increments_are_classes():
            new_data = train.subset(classes=[increment_id])
        else:
            new_data = train.subset(scenarios=[increment_id])
        if len(new_data) == 0:
            raise ValueError(f"no training data for increment id {increment_id}")
        buffer, rows, summary = run_increment(net, buffer, new_data, scenario, cfg,
                                              test, step, increment_id, learned)
        report.rows.extend(rows)
        report.steps.append(summary)
        learned.add(increment_id)
        if step_hook is not None:
            step_hook(step, net, buffer)
    return report
