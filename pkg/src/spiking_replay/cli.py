"""Command-line front end.

Subcommands: synth, pretrain, continual, membench, eval, convert-check.
Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failures during
training. Thread count comes from --threads or SPIKING_REPLAY_THREADS.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    canonical_hash,
    load_config,
)
from .continual import run_protocol
from .neurons import Network, NumericError, build_network, load_network, save_network
from .replay import CODEC_KINDS, CodecSpec, ReplayBuffer, memory_footprint
from .seeding import substream
from .spikes import SpikeSetFormatError, load_spikeset, save_spikeset
from .synth import SynthSpec, default_names, make_synthetic_spikeset
from .training import evaluate, write_metrics_csv, write_run_summary


def human_bytes(n: float) -> str:
    """Decimal units, trailing zeros trimmed: 22400000 -> '22.4 MB'."""
    for unit, scale in (("GB", 1e9), ("MB", 1e6), ("kB", 1e3)):
        if n >= scale:
            return f"{n / scale:g} {unit}"
    return f"{n:g} B"


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigError(f"required file not found: {p}")


def _refuse_overwrite(paths, force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(
            "refusing to overwrite existing outputs (use --force): " + ", ".join(existing)
        )


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes,
        num_scenarios=args.scenarios,
        samples_per=args.samples_per,
        timesteps=args.timesteps,
        neurons=args.neurons,
        rate_hi=args.rate_hi,
        rate_lo=args.rate_lo,
        window_fraction=args.window_fraction,
        jitter_std=args.jitter_std,
    )
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    params = dict(vars(spec), seed=args.seed, pattern_seed=args.pattern_seed)
    manifest = RunManifest("synth", canonical_hash(params), args.seed).begin()
    spikeset = make_synthetic_spikeset(spec, args.seed, args.pattern_seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    class_names, scenario_names = default_names(spec)
    save_spikeset(spikeset, out, class_names, scenario_names)
    manifest.finish([out, f"{out}.json"]).write(f"{out}.manifest.json")
    print(f"wrote {len(spikeset)} samples ({spikeset.timesteps}x{spikeset.neurons}) to {out}")
    return 0


def _build_from_config(cfg: ExperimentConfig, num_outputs: int, input_size: int) -> Network:
    return build_network(
        input_size,
        list(cfg.model["hidden_sizes"]) + [num_outputs],
        substream(cfg.seed, "init"),
        alpha=cfg.model["alpha"],
        beta=cfg.model["beta"],
        theta=cfg.model["theta"],
        split_index=cfg.scenario.layer_index if cfg.scenario else 0,
    )


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.seed)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    _require_files(cfg.train_data, cfg.test_data)
    ckpt = out_dir / "pretrained.ckpt"
    metrics_csv = out_dir / "pretrain_metrics.csv"
    summary_json = out_dir / "pretrain_summary.json"
    manifest_path = out_dir / "pretrain_manifest.json"
    _refuse_overwrite([ckpt, metrics_csv, summary_json], args.force)
    if cfg.scenario is None:
        raise ConfigError("pretrain needs a 'continual' section to define the data split")

    manifest = RunManifest("pretrain", cfg.config_hash, cfg.seed).begin()
    train = load_spikeset(cfg.train_data)
    test = load_spikeset(cfg.test_data)
    net = _build_from_config(cfg, train.num_classes, train.neurons)

    from .continual import pretrain as run_pretrain

    result = run_pretrain(net, cfg.scenario, cfg.train_cfg, train, test)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_network(net, ckpt, extra={"seed": cfg.seed, "config_hash": cfg.config_hash})
    write_metrics_csv(result.records, metrics_csv)
    write_run_summary(summary_json, {
        "command": "pretrain",
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "epochs": cfg.scenario.epochs_pretrain,
        "baselines": result.baselines,
    })
    manifest.finish([ckpt, metrics_csv, summary_json]).write(manifest_path)
    print(f"pretrained {cfg.scenario.epochs_pretrain} epochs; "
          f"baselines {json.dumps(result.baselines, sort_keys=True)}")
    return 0


def _dry_run_plan(cfg: ExperimentConfig, train, test) -> dict:
    scenario = cfg.scenario
    pretrain_sub = train.subset(classes=scenario.pretrain_classes,
                                scenarios=scenario.pretrain_scenarios)
    if scenario.layer_index == 0:
        capture_neurons = train.neurons
    else:
        capture_neurons = cfg.model["hidden_sizes"][scenario.layer_index - 1]
    probe = ReplayBuffer(scenario.codec, scenario.layer_index, capture_neurons, train.timesteps)
    probe.entries = {0: [None] * scenario.replay_count}
    plan = {
        "kind": scenario.kind,
        "train_samples": len(train),
        "test_samples": len(test),
        "pretrain_samples": len(pretrain_sub),
        "increments": list(scenario.increments),
        "layer_index": scenario.layer_index,
        "capture_neurons": capture_neurons,
        "codec": {"kind": scenario.codec.kind, "ratio": scenario.codec.ratio,
                  "threshold": scenario.codec.threshold},
        "replay_count": scenario.replay_count,
        "replay_bytes": memory_footprint(probe),
        "epochs_pretrain": scenario.epochs_pretrain,
        "epochs_cl": scenario.epochs_cl,
    }
    if scenario.per_class_quota:
        growth = ReplayBuffer(scenario.codec, scenario.layer_index, capture_neurons,
                              train.timesteps)
        growth.entries = {0: [None] * scenario.per_class_quota}
        plan["replay_bytes_per_step"] = memory_footprint(growth)
    return plan


def cmd_continual(args) -> int:
    cfg = load_config(args.config, args.seed)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    ckpt = cfg.checkpoint if cfg.checkpoint else cfg.output_dir / "pretrained.ckpt"
    if cfg.scenario is None:
        raise ConfigError("continual needs a 'continual' section in the config")
    _require_files(cfg.train_data, cfg.test_data)

    train = load_spikeset(cfg.train_data)
    test = load_spikeset(cfg.test_data)

    if args.dry_run:  # plan only; works before the checkpoint exists
        print(json.dumps(_dry_run_plan(cfg, train, test), indent=2, sort_keys=True))
        return 0
    _require_files(ckpt)

    report_csv = out_dir / "cl_report.csv"
    summary_json = out_dir / "cl_summary.json"
    manifest_path = out_dir / "continual_manifest.json"
    _refuse_overwrite([report_csv, summary_json], args.force)
    manifest = RunManifest("continual", cfg.config_hash, cfg.seed).begin()

    net, _ = load_network(ckpt)
    out_dir.mkdir(parents=True, exist_ok=True)
    step_ckpts = []

    def step_hook(step, current_net, buffer):
        path = out_dir / f"step-{step:02d}.ckpt"
        save_network(current_net, path, extra={"seed": cfg.seed, "step": step})
        step_ckpts.append(path)

    report = run_protocol(cfg.scenario, cfg.train_cfg, train, test, net,
                          skip_pretrain=True, step_hook=step_hook)
    report.write_csv(report_csv)
    summary = dict(report.summary(), command="continual",
                   config_hash=cfg.config_hash, seed=cfg.seed)
    write_run_summary(summary_json, summary)
    manifest.finish([report_csv, summary_json, *step_ckpts]).write(manifest_path)
    final = report.steps[-1]
    print(f"completed {len(report.steps)} increment(s); "
          f"final acc_full={final.acc_full:.4f} forgetting={final.forgetting:.4f}")
    return 0


def cmd_membench(args) -> int:
    neurons = [int(x) for x in args.neurons.split(",")]
    ratios = [int(x) for x in args.ratios.split(",")]
    rows = []
    for ratio in ratios:
        for width in neurons:
            codec = CodecSpec(kind=args.codec, ratio=ratio,
                              threshold=min(args.threshold, ratio))
            probe = ReplayBuffer(codec, 0, width, args.timesteps)
            probe.entries = {0: [None] * args.entries}
            nbytes = memory_footprint(probe)
            rows.append({
                "codec": args.codec,
                "ratio": ratio,
                "neurons": width,
                "entries": args.entries,
                "timesteps": args.timesteps,
                "bytes": nbytes,
                "human": human_bytes(nbytes),
            })
    header = f"{'codec':>16} {'ratio':>6} {'neurons':>8} {'bytes':>14} {'size':>10}"
    print(header)
    for row in rows:
        print(f"{row['codec']:>16} {row['ratio']:>6} {row['neurons']:>8} "
              f"{row['bytes']:>14.10g} {row['human']:>10}")
    if args.out:
        params = {"entries": args.entries, "neurons": neurons, "ratios": ratios,
                  "timesteps": args.timesteps, "codec": args.codec,
                  "threshold": args.threshold}
        manifest = RunManifest("membench", canonical_hash(params), 0).begin()
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        manifest.finish([args.out]).write(f"{args.out}.manifest.json")
    return 0


def cmd_eval(args) -> int:
    _require_files(args.checkpoint, args.data)
    net, _ = load_network(args.checkpoint)
    data = load_spikeset(args.data)
    classes = [int(x) for x in args.classes.split(",")] if args.classes else None
    scenarios = [int(x) for x in args.scenarios.split(",")] if args.scenarios else None
    accuracy = evaluate(net, data, classes=classes, scenarios=scenarios)
    sub = data.subset(classes, scenarios) if (classes or scenarios) else data
    result = {"accuracy": accuracy, "samples": len(sub),
              "classes": classes, "scenarios": scenarios}
    print(json.dumps(result, sort_keys=True))
    if args.out:
        params = {"checkpoint": str(args.checkpoint), "data": str(args.data),
                  "classes": classes, "scenarios": scenarios}
        manifest = RunManifest("eval", canonical_hash(params), 0).begin()
        write_run_summary(args.out, result)
        manifest.finish([args.out]).write(f"{args.out}.manifest.json")
    return 0


def cmd_convert_check(args) -> int:
    spikeset = load_spikeset(args.path)
    print(json.dumps({
        "samples": len(spikeset),
        "timesteps": spikeset.timesteps,
        "neurons": spikeset.neurons,
        "num_classes": spikeset.num_classes,
        "num_scenarios": spikeset.num_scenarios,
        "classes_present": sorted(int(c) for c in np.unique(spikeset.class_ids)),
        "scenarios_present": sorted(int(s) for s in np.unique(spikeset.scenario_ids)),
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiking-replay",
        description="Continual learning for recurrent spiking networks with compressed latent replays.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (default: SPIKING_REPLAY_THREADS or unlimited)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic SpikeSet")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pattern-seed", type=int, default=None,
                   help="structure seed; reuse across splits to share class patterns")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--scenarios", type=int, default=2)
    p.add_argument("--samples-per", type=int, default=50)
    p.add_argument("--timesteps", type=int, default=100)
    p.add_argument("--neurons", type=int, default=64)
    p.add_argument("--rate-hi", type=float, default=0.35)
    p.add_argument("--rate-lo", type=float, default=0.02)
    p.add_argument("--window-fraction", type=float, default=0.5)
    p.add_argument("--jitter-std", type=float, default=1.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="initial training phase")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the config output_dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("continual", help="run the continual-learning protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved plan without training")
    p.set_defaults(func=cmd_continual)

    p = sub.add_parser("membench", help="closed-form replay memory table")
    p.add_argument("--entries", type=int, default=2560)
    p.add_argument("--neurons", default="700,200,100,50",
                   help="comma-separated widths (naive rehearsal first)")
    p.add_argument("--timesteps", type=int, default=100)
    p.add_argument("--ratios", default="1,5,10")
    p.add_argument("--codec", choices=CODEC_KINDS, default="chunk_threshold")
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--out", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_membench)

    p = sub.add_parser("eval", help="Top-1 accuracy of a checkpoint on a SpikeSet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes", default=None, help="comma-separated class filter")
    p.add_argument("--scenarios", default=None, help="comma-separated scenario filter")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert-check", help="validate a .spks file and print its shape")
    p.add_argument("path")
    p.set_defaults(func=cmd_convert_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("SPIKING_REPLAY_THREADS"):
        threads = int(os.environ["SPIKING_REPLAY_THREADS"])
    try:
        if threads:
            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, SpikeSetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
