"""Command-line entry point: gen / train / eval / infer / bench.

Each command reads an optional JSON config, applies flag overrides on top, and
writes the fully resolved configuration into its output directory so the run
can be reproduced from that file alone. Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_state_dict, split_aux_tensors
from .evalmetrics import (
    FrameDetections,
    evaluate,
    read_detections_jsonl,
    write_detections_jsonl,
)
from .fusioncore import (
    MECHANISM_ALIASES,
    MECHANISMS,
    FusionConfig,
    PairCounter,
    TwoStreamSegmenter,
)
from .losses import LossWeights, PointSampleConfig
from .motionrep import MotionKind, MotionStats
from .reporting import (
    metric_csv_rows,
    save_bench_chart,
    save_detection_overlay,
    save_loss_curves,
    save_metric_bars,
    write_csv,
)
from .synthscene import DatasetMix, generate_from_mix, read_sample, sample_dirs, write_dataset
from .trainer import (
    LOG_NAME,
    TrainConfig,
    default_mix,
    evaluation_frames,
    finetune_fusion,
    load_run,
    pretrain_single,
    run_training,
)

RUN_CONFIG_NAME = "run_config.json"
MODALITY_CHOICES = ("rgb", "of", "sf", "emb")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Fully resolved parameters of one command invocation."""

    command: str
    out: Optional[Path] = None
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out = Path(self.out) if self.out is not None else None

    @property
    def seed(self) -> int:
        return int(self.payload.get("seed", 0))

    def require_out(self) -> Path:
        if self.out is None:
            raise UsageError(f"{self.command} needs --out (or 'out' in the config)")
        return self.out

    def mix(self) -> DatasetMix:
        if "mix" in self.payload:
            return DatasetMix.from_dict(self.payload["mix"])
        return default_mix()

    def model_config(self, **forced) -> FusionConfig:
        base = FusionConfig.from_dict(self.payload.get("model", {})).to_dict()
        base.update(forced)
        return FusionConfig.from_dict(base)

    def train_config(self) -> TrainConfig:
        data = TrainConfig(mix=self.mix()).to_dict()
        data.update(self.payload.get("train", {}))
        data["seed"] = self.seed
        data["mix"] = self.mix().to_dict()
        if "p_neg" in self.payload:
            data["p_neg"] = self.payload["p_neg"]
        return TrainConfig.from_dict(data)

    def to_dict(self) -> dict:
        # The output path stays out of the record so rerun directories
        # match byte for byte.
        out = dict(self.payload)
        out["command"] = self.command
        return out

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / RUN_CONFIG_NAME, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen": "render a dataset mix to disk",
        "train": "pretrain a single stream or finetune a fused model",
        "eval": "score a checkpoint or a prediction dump against a dataset",
        "infer": "dump detections (and overlays) for a dataset",
        "bench": "attention-pair counts, timing, and memory per mechanism",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument(
            "--mechanism", choices=sorted(MECHANISM_ALIASES),
            help="fusion mechanism (aliases: d, e, ed, mbt)",
        )
        p.add_argument("--modality", choices=MODALITY_CHOICES, help="input stream to pretrain")
        p.add_argument("--p-neg", dest="p_neg", type=float, help="negative-example probability")
    return parser


def resolve_config(args) -> RunConfig:
    payload = {}
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as f:
            payload = json.load(f)
        if not isinstance(payload, dict):
            raise UsageError("config file must hold a JSON object")
    payload.pop("command", None)
    out = payload.pop("out", None)
    if args.out is not None:
        out = args.out
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.mechanism is not None:
        payload["mechanism"] = MECHANISM_ALIASES[args.mechanism]
    elif "mechanism" in payload:
        name = payload["mechanism"]
        if name not in MECHANISMS and name not in MECHANISM_ALIASES:
            raise UsageError(f"unknown mechanism: {name}")
        payload["mechanism"] = MECHANISM_ALIASES.get(name, name)
    if args.modality is not None:
        payload["modality"] = args.modality
    elif "modality" in payload and payload["modality"] not in MODALITY_CHOICES:
        raise UsageError(f"unknown modality: {payload['modality']}")
    if args.p_neg is not None:
        payload["p_neg"] = args.p_neg
    if "p_neg" in payload and not 0.0 <= payload["p_neg"] <= 1.0:
        raise UsageError("p-neg must lie in [0, 1]")
    return RunConfig(command=args.command, out=out, payload=payload)


def _loss_settings(run: RunConfig) -> tuple:
    weights = LossWeights(**run.payload["loss_weights"]) if "loss_weights" in run.payload else LossWeights()
    sample_cfg = (
        PointSampleConfig(**run.payload["point_sampling"])
        if "point_sampling" in run.payload
        else PointSampleConfig()
    )
    return weights, sample_cfg


def _load_eval_assets(run: RunConfig, checkpoint_path) -> tuple:
    """Checkpoint -> (model, motion kind, stats, embedding channels)."""
    path = Path(checkpoint_path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    manifest, state = load_state_dict(path)
    model_state, _ = split_aux_tensors(manifest, state)
    model = TwoStreamSegmenter(FusionConfig.from_dict(manifest["model_config"]))
    model.load_state_dict(model_state)
    extra = manifest["extra"]
    return (
        model,
        MotionKind(extra["kind"]),
        MotionStats.from_dict(extra["stats"]),
        int(extra.get("embedding_channels", 28)),
    )


def _load_dataset(run: RunConfig) -> list:
    name = run.payload.get("dataset")
    if not name:
        raise UsageError(f"{run.command} needs a 'dataset' directory in the config")
    root = Path(name)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    dirs = sample_dirs(root)
    if not dirs:
        raise FileNotFoundError(f"dataset holds no samples: {root}")
    limit = run.payload.get("max_samples")
    if limit is not None:
        dirs = dirs[: int(limit)]
    return [read_sample(d) for d in dirs]


def cmd_gen(run: RunConfig) -> None:
    out = run.require_out()
    n = int(run.payload.get("n", 100))
    if n < 1:
        raise UsageError("n must be >= 1")
    mix = run.mix()
    rng = np.random.default_rng(run.seed)
    samples = (generate_from_mix(mix, rng)[1] for _ in range(n))
    manifest = write_dataset(out, samples, manifest_extra={"seed": run.seed, "mix": mix.to_dict()})
    run.payload.setdefault("mix", mix.to_dict())
    run.payload["n"] = n
    run.write(out)
    print(f"wrote {manifest['num_samples']} samples to {out}")


def cmd_train(run: RunConfig) -> None:
    out = run.require_out()
    phase = run.payload.get("phase")
    if phase is None:
        phase = "finetune" if "rgb_checkpoint" in run.payload else "pretrain"
    if phase not in ("pretrain", "finetune"):
        raise UsageError(f"unknown training phase: {phase}")
    cfg = run.train_config()
    torch.manual_seed(cfg.seed)

    if phase == "pretrain":
        modality = run.payload.get("modality")
        if modality is None:
            raise UsageError("pretraining needs --modality (rgb, of, sf, emb)")
        if run.payload.get("mechanism", "single") != "single":
            raise UsageError("--mechanism applies to the finetune phase")
        train_run = pretrain_single(
            modality,
            cfg=cfg,
            model_cfg=run.model_config(),
            stats_samples=int(run.payload.get("stats_samples", 64)),
            embedding_channels=int(run.payload.get("embedding_channels", 28)),
        )
    else:
        for key in ("rgb_checkpoint", "motion_checkpoint"):
            if key not in run.payload:
                raise UsageError(f"finetuning needs '{key}' in the config")
            if not Path(run.payload[key]).is_file():
                raise FileNotFoundError(f"checkpoint not found: {run.payload[key]}")
        train_run = finetune_fusion(
            run.payload["rgb_checkpoint"],
            run.payload["motion_checkpoint"],
            run.payload.get("mechanism", "decoder"),
            cfg=cfg,
        )

    weights, sample_cfg = _loss_settings(run)
    run.payload["phase"] = phase
    run.payload["train"] = cfg.to_dict()
    run.write(out)
    summary = run_training(train_run, out, weights=weights, sample_cfg=sample_cfg)
    with open(out / LOG_NAME) as f:
        records = [json.loads(line) for line in f]
    save_loss_curves(records, out / "loss_curve.png")
    print(
        f"trained {summary['steps_run']} steps, final loss "
        f"{summary['final_loss']:.4f}, checkpoint at {summary['checkpoint']}"
    )


def cmd_eval(run: RunConfig) -> None:
    out = run.require_out()
    run.write(out)
    samples = _load_dataset(run)
    ground_truth = [
        [(s.instance_masks == i) for i in s.moving_ids()] for s in samples
    ]

    if "predictions" in run.payload:
        pred_path = Path(run.payload["predictions"])
        if not pred_path.is_file():
            raise FileNotFoundError(f"prediction dump not found: {pred_path}")
        detections = read_detections_jsonl(pred_path)
        if len(detections) != len(samples):
            raise ValueError(
                f"prediction dump holds {len(detections)} frames, dataset {len(samples)}"
            )
        frames = [
            FrameDetections(predictions=d, ground_truth=g)
            for d, g in zip(detections, ground_truth)
        ]
    elif "checkpoint" in run.payload:
        model, kind, stats, emb = _load_eval_assets(run, run.payload["checkpoint"])
        frames = evaluation_frames(
            model, samples, kind, stats,
            batch_size=int(run.payload.get("batch_size", 8)),
            embedding_channels=emb,
        )
        write_detections_jsonl(out / "detections.jsonl", frames)
    else:
        raise UsageError("eval needs 'checkpoint' or 'predictions' in the config")

    report = evaluate(frames)
    metrics = report.to_dict()
    with open(out / "report.json", "w") as f:
        json.dump(metrics, f, indent=1, sort_keys=True)
    write_csv(out / "report.csv", ("metric", "value"), metric_csv_rows(metrics))
    save_metric_bars(metrics, out / "report.png")
    shown = {k: v for k, v in metrics.items() if k in ("ap", "ap50", "fu")}
    print(f"evaluated {len(frames)} frames: " + json.dumps(shown, sort_keys=True))


def cmd_infer(run: RunConfig) -> None:
    out = run.require_out()
    if "checkpoint" not in run.payload:
        raise UsageError("infer needs 'checkpoint' in the config")
    samples = _load_dataset(run)
    model, kind, stats, emb = _load_eval_assets(run, run.payload["checkpoint"])
    frames = evaluation_frames(
        model, samples, kind, stats,
        batch_size=int(run.payload.get("batch_size", 8)),
        embedding_channels=emb,
    )
    run.write(out)
    write_detections_jsonl(out / "detections.jsonl", frames)
    if run.payload.get("overlays", True):
        n_overlays = min(len(samples), int(run.payload.get("max_overlays", 8)))
        for i in range(n_overlays):
            save_detection_overlay(
                samples[i].frames[0],
                frames[i].predictions,
                out / f"overlay_{i:04d}.png",
                ground_truth=frames[i].ground_truth,
            )
    n_det = sum(len(f.predictions) for f in frames)
    print(f"wrote {n_det} detections over {len(frames)} frames to {out}")


def _profiled_peak_bytes(fn) -> int:
    """Upper-envelope estimate of live allocator bytes during fn()."""
    from torch.profiler import ProfilerActivity, profile

    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = sorted(prof.events(), key=lambda e: e.time_range.start)
    running = peak = 0
    for event in events:
        running += event.cpu_memory_usage
        peak = max(peak, running)
    return int(peak)


def cmd_bench(run: RunConfig) -> None:
    out = run.require_out()
    torch.manual_seed(run.seed)
    repeats = int(run.payload.get("repeats", 3))
    h = int(run.payload.get("height", 96))
    w = int(run.payload.get("width", 96))
    batch = int(run.payload.get("batch_size", 1))
    base_cfg = run.model_config()
    rgb = torch.randn(batch, base_cfg.rgb_channels, h, w)
    motion = torch.randn(batch, base_cfg.motion_channels, h, w)

    rows = []
    for mechanism in MECHANISMS:
        cfg = run.model_config(mechanism=mechanism)
        model = TwoStreamSegmenter(cfg).eval()
        with torch.no_grad():
            model(rgb=rgb, motion=motion)  # warmup
            with PairCounter() as counter:
                model(rgb=rgb, motion=motion)
            times = []
            for _ in range(repeats):
                start = time.perf_counter()
                model(rgb=rgb, motion=motion)
                times.append((time.perf_counter() - start) * 1e3)
            peak = _profiled_peak_bytes(lambda: model(rgb=rgb, motion=motion))
        rows.append(
            {
                "mechanism": mechanism,
                "forward_ms": round(statistics.median(times), 3),
                "attention_pairs": counter.total,
                "pairs_by_kind": dict(sorted(counter.by_tag.items())),
                "peak_bytes_estimate": peak,
                "parameters": sum(p.numel() for p in model.parameters()),
            }
        )

    run.write(out)
    with open(out / "bench.json", "w") as f:
        json.dump({"height": h, "width": w, "batch_size": batch, "rows": rows}, f, indent=1)
    csv_rows = [{k: v for k, v in r.items() if k != "pairs_by_kind"} for r in rows]
    write_csv(
        out / "bench.csv",
        ("mechanism", "forward_ms", "attention_pairs", "peak_bytes_estimate", "parameters"),
        csv_rows,
    )
    save_bench_chart(rows, out / "bench.png")
    for r in rows:
        print(
            f"{r['mechanism']:>16}: {r['attention_pairs']:>12} pairs, "
            f"{r['forward_ms']:8.1f} ms, ~{r['peak_bytes_estimate'] / 1e6:7.1f} MB"
        )


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = resolve_config(args)
        HANDLERS[run.command](run)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures: one line, exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
