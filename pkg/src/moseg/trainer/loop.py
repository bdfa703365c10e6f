"""Optimization loop, checkpoint/resume plumbing, and the two training phases:
single-stream pretraining and fused finetuning with a frozen appearance branch.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn

from ..checkpoint import load_state_dict, save_checkpoint, split_aux_tensors, transfer_matching
from ..evalmetrics import MetricReport, evaluate
from ..fusioncore import FusionConfig, TwoStreamSegmenter
from ..losses import LossWeights, PointSampleConfig, total_loss
from ..motionrep import MotionKind, MotionStats
from ..synthscene import generate_from_mix
from .config import TrainConfig, finetune_defaults, pretrain_defaults
from .data import (
    TARGET_MOVABLE,
    TARGET_MOVING,
    build_stats,
    evaluation_frames,
    make_batch,
    step_torch_generator,
)

CHECKPOINT_NAME = "checkpoint.zip"
LOG_NAME = "train_log.jsonl"

# modality flags -> (motion kind or None for appearance-only, pretrain target)
MODALITIES = {
    "rgb": (None, TARGET_MOVABLE),
    "of": (MotionKind.OPTICAL_FLOW, TARGET_MOVING),
    "sf": (MotionKind.SCENE_FLOW, TARGET_MOVING),
    "emb": (MotionKind.EMBEDDING, TARGET_MOVING),
}


def build_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with a reduced-lr group for backbone parameters. Group order is
    fixed (main, backbone) so optimizer state names are stable across runs."""
    main, backbone = [], []
    for name, p in sorted(model.named_parameters()):
        if not p.requires_grad:
            continue
        (backbone if ".backbone." in name else main).append(p)
    groups = []
    for params, lr in ((main, cfg.lr), (backbone, cfg.lr * cfg.backbone_lr_mult)):
        groups.append({"params": params, "lr": lr, "base_lr": lr})
    return torch.optim.AdamW(groups, lr=cfg.lr, weight_decay=cfg.weight_decay)


def apply_lr_schedule(optimizer, cfg: TrainConfig, epoch: int) -> float:
    factor = 0.1 if epoch >= cfg.lr_drop_epoch else 1.0
    for group in optimizer.param_groups:
        group["lr"] = group["base_lr"] * factor
    return optimizer.param_groups[0]["lr"]


def optimizer_tensors(optimizer) -> dict:
    """Flatten optimizer state into named float32 tensors for checkpointing."""
    out = {}
    for gi, group in enumerate(optimizer.param_groups):
        for pi, p in enumerate(group["params"]):
            for key, value in optimizer.state.get(p, {}).items():
                t = value if torch.is_tensor(value) else torch.tensor(float(value))
                out[f"optimizer/{gi}.{pi}.{key}"] = t.float()
    return out


def restore_optimizer(optimizer, aux: dict) -> None:
    for gi, group in enumerate(optimizer.param_groups):
        for pi, p in enumerate(group["params"]):
            prefix = f"optimizer/{gi}.{pi}."
            entries = {k[len(prefix):]: v for k, v in aux.items() if k.startswith(prefix)}
            if entries:
                optimizer.state[p] = {k: v.clone() for k, v in entries.items()}


def frozen_names(model: nn.Module) -> List[str]:
    return [n for n, p in model.named_parameters() if not p.requires_grad]


def freeze_appearance(model: TwoStreamSegmenter) -> List[str]:
    """Lock the appearance stream except its classification head."""
    frozen = []
    for name, p in model.named_parameters():
        if name.startswith("streams.rgb.") and ".head.class_head." not in name:
            p.requires_grad_(False)
            frozen.append(name)
    return frozen


def reinit_class_heads(model: TwoStreamSegmenter) -> None:
    for name in model.stream_names:
        model.streams[name].head.class_head.reset_parameters()


@dataclass
class TrainRun:
    model: TwoStreamSegmenter
    optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    kind: MotionKind
    stats: MotionStats
    target: str
    next_step: int = 0
    embedding_channels: int = 28


def save_run(path, run: TrainRun, metrics: Optional[dict] = None) -> None:
    extra = {
        "step": run.next_step,
        "target": run.target,
        "kind": run.kind.value,
        "stats": run.stats.to_dict(),
        "embedding_channels": run.embedding_channels,
        "frozen": frozen_names(run.model),
    }
    if metrics:
        extra["metrics"] = metrics
    save_checkpoint(
        path,
        run.model,
        run.model.cfg,
        train_config=run.cfg.to_dict(),
        extra=extra,
        extra_tensors=optimizer_tensors(run.optimizer),
    )


def load_run(path) -> TrainRun:
    """Rebuild a training run (model, optimizer moments, position) for resume."""
    manifest, state = load_state_dict(path)
    model_state, aux = split_aux_tensors(manifest, state)
    model = TwoStreamSegmenter(FusionConfig.from_dict(manifest["model_config"]))
    model.load_state_dict(model_state)
    extra = manifest["extra"]
    frozen = set(extra.get("frozen", []))
    for name, p in model.named_parameters():
        if name in frozen:
            p.requires_grad_(False)
    cfg = TrainConfig.from_dict(manifest["train_config"])
    optimizer = build_optimizer(model, cfg)
    restore_optimizer(optimizer, aux)
    return TrainRun(
        model=model,
        optimizer=optimizer,
        cfg=cfg,
        kind=MotionKind(extra["kind"]),
        stats=MotionStats.from_dict(extra["stats"]),
        target=extra["target"],
        next_step=int(extra["step"]),
        embedding_channels=int(extra.get("embedding_channels", 28)),
    )


def run_training(
    run: TrainRun,
    out_dir,
    weights: LossWeights = LossWeights(),
    sample_cfg: PointSampleConfig = PointSampleConfig(),
    stop_after_steps: Optional[int] = None,
    on_step=None,
) -> dict:
    """Advance the run to completion (or stop_after_steps), logging one JSONL
    record per step and checkpointing at every epoch boundary and on exit.

    Raises RuntimeError if the loss leaves the finite range.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = run.cfg
    model = run.model
    optimizer = run.optimizer
    trainable = [p for g in optimizer.param_groups for p in g["params"]]
    last = min(cfg.total_steps, stop_after_steps) if stop_after_steps else cfg.total_steps
    ckpt_path = out_dir / CHECKPOINT_NAME
    losses = []

    with open(out_dir / LOG_NAME, "a") as log:
        for step in range(run.next_step, last):
            epoch = step // cfg.steps_per_epoch
            lr = apply_lr_schedule(optimizer, cfg, epoch)
            batch = make_batch(
                cfg, run.kind, run.stats, run.target, step,
                embedding_channels=run.embedding_channels,
            )
            model.train()
            predictions = model(rgb=batch.rgb, motion=batch.motion)
            loss, parts = total_loss(
                predictions,
                batch.target_masks,
                weights,
                sample_cfg,
                generator=step_torch_generator(cfg.seed, step),
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step}: "
                    + ", ".join(f"{k}={v.detach().item():.4g}" for k, v in parts.items())
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(trainable, cfg.clip_norm)
            optimizer.step()
            run.next_step = step + 1

            record = {
                "step": step,
                "epoch": epoch,
                "loss": loss.detach().item(),
                "mask_ce": parts["mask_ce"].detach().item(),
                "dice": parts["dice"].detach().item(),
                "cls": parts["cls"].detach().item(),
                "lr": lr,
                "grad_norm": float(grad_norm),
            }
            log.write(json.dumps(record) + "\n")
            losses.append(record["loss"])
            if on_step is not None:
                on_step(record)
            if run.next_step % cfg.steps_per_epoch == 0:
                save_run(ckpt_path, run)

    save_run(ckpt_path, run)
    return {
        "steps_run": len(losses),
        "next_step": run.next_step,
        "final_loss": losses[-1] if losses else None,
        "checkpoint": str(ckpt_path),
        "log": str(out_dir / LOG_NAME),
    }


def evaluate_run(run: TrainRun, n_samples: int = 64, seed: int = 1) -> MetricReport:
    """Fresh-sample metric report for the run's current model."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6576616C)))
    samples = [generate_from_mix(run.cfg.mix, rng)[1] for _ in range(n_samples)]
    frames = evaluation_frames(
        run.model, samples, run.kind, run.stats,
        batch_size=run.cfg.batch_size,
        embedding_channels=run.embedding_channels,
    )
    return evaluate(frames)


def pretrain_single(
    modality: str,
    cfg: Optional[TrainConfig] = None,
    model_cfg: Optional[FusionConfig] = None,
    stats_samples: int = 64,
    embedding_channels: int = 28,
) -> TrainRun:
    """Set up single-stream pretraining: appearance learns movable bodies,
    motion streams learn currently-moving ones."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality: {modality}")
    kind, target = MODALITIES[modality]
    cfg = cfg if cfg is not None else pretrain_defaults()
    stats_kind = kind if kind is not None else MotionKind.OPTICAL_FLOW
    stats = build_stats(
        cfg.mix, stats_kind, n_samples=stats_samples, seed=cfg.seed,
        embedding_channels=embedding_channels,
    )
    base = model_cfg if model_cfg is not None else FusionConfig()
    model_cfg = replace(
        base,
        mechanism="single",
        single_stream="rgb" if kind is None else "motion",
        motion_channels=stats_kind.channels(embedding_channels),
    )
    model = TwoStreamSegmenter(model_cfg)
    return TrainRun(
        model=model,
        optimizer=build_optimizer(model, cfg),
        cfg=cfg,
        kind=stats_kind,
        stats=stats,
        target=target,
        embedding_channels=embedding_channels,
    )


def finetune_fusion(
    rgb_checkpoint,
    motion_checkpoint,
    mechanism: str,
    cfg: Optional[TrainConfig] = None,
) -> TrainRun:
    """Assemble a fused model from two single-stream checkpoints.

    Matching parameters transfer (fused-encoder variants get a fresh encoder),
    both classification heads restart from random init, and the appearance
    stream is frozen apart from its classification head.
    """
    rgb_manifest, rgb_state = load_state_dict(rgb_checkpoint)
    mot_manifest, mot_state = load_state_dict(motion_checkpoint)
    rgb_state, _ = split_aux_tensors(rgb_manifest, rgb_state)
    mot_state, _ = split_aux_tensors(mot_manifest, mot_state)
    rgb_cfg = FusionConfig.from_dict(rgb_manifest["model_config"])
    mot_cfg = FusionConfig.from_dict(mot_manifest["model_config"])
    if rgb_cfg.single_stream != "rgb" or mot_cfg.single_stream != "motion":
        raise ValueError("checkpoints must be appearance- and motion-stream pretrains")
    if (rgb_cfg.d_model, rgb_cfg.n_queries) != (mot_cfg.d_model, mot_cfg.n_queries):
        raise ValueError("stream checkpoints disagree on model dimensions")

    model_cfg = replace(rgb_cfg, mechanism=mechanism, motion_channels=mot_cfg.motion_channels)
    model = TwoStreamSegmenter(model_cfg)
    with torch.no_grad():
        transfer_matching(model, rgb_state)
        transfer_matching(model, mot_state)
    reinit_class_heads(model)
    freeze_appearance(model)

    cfg = cfg if cfg is not None else finetune_defaults()
    extra = mot_manifest["extra"]
    return TrainRun(
        model=model,
        optimizer=build_optimizer(model, cfg),
        cfg=cfg,
        kind=MotionKind(extra["kind"]),
        stats=MotionStats.from_dict(extra["stats"]),
        target=TARGET_MOVING,
        embedding_channels=int(extra.get("embedding_channels", 28)),
    )
