"""Training: configs, joint augmentation, batch pipeline, optimization loop."""

from .augment import MIN_CROP, augment, crop_sample, flip_sample, scale_sample
from .config import (
    LARGE_MIX_P_NEG,
    SMALL_MIX_P_NEG,
    TrainConfig,
    default_mix,
    finetune_defaults,
    pretrain_defaults,
)
from .data import (
    TARGET_MOVABLE,
    TARGET_MOVING,
    Batch,
    build_stats,
    evaluation_frames,
    make_batch,
    masks_for_ids,
    rgb_tensor,
    sample_to_element,
    step_rng,
    step_torch_generator,
    target_ids,
)
from .loop import (
    CHECKPOINT_NAME,
    LOG_NAME,
    MODALITIES,
    TrainRun,
    apply_lr_schedule,
    build_optimizer,
    evaluate_run,
    finetune_fusion,
    freeze_appearance,
    load_run,
    optimizer_tensors,
    pretrain_single,
    reinit_class_heads,
    restore_optimizer,
    run_training,
    save_run,
)

__all__ = [
    "MIN_CROP",
    "LARGE_MIX_P_NEG",
    "SMALL_MIX_P_NEG",
    "CHECKPOINT_NAME",
    "LOG_NAME",
    "MODALITIES",
    "TARGET_MOVABLE",
    "TARGET_MOVING",
    "Batch",
    "TrainConfig",
    "TrainRun",
    "apply_lr_schedule",
    "augment",
    "build_optimizer",
    "build_stats",
    "crop_sample",
    "default_mix",
    "evaluate_run",
    "evaluation_frames",
    "finetune_defaults",
    "finetune_fusion",
    "flip_sample",
    "freeze_appearance",
    "load_run",
    "make_batch",
    "masks_for_ids",
    "optimizer_tensors",
    "pretrain_defaults",
    "pretrain_single",
    "reinit_class_heads",
    "restore_optimizer",
    "rgb_tensor",
    "run_training",
    "sample_to_element",
    "save_run",
    "scale_sample",
    "step_rng",
    "step_torch_generator",
    "target_ids",
]
