"""Training loop, checkpoints, and model selection."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    average_checkpoints,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from .loss import label_smoothed_loss, label_smoothed_nll, smoothed_targets
from .selection import (
    build_from_checkpoint,
    build_lm_from_checkpoint,
    decode_corpus,
    select_models,
    tune_lambda,
)
from .trainer import (
    LOG_HEADER,
    EpochRecord,
    LanguageModelObjective,
    Renderer,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    TranslationObjective,
    fit,
    global_norm,
    sgd_step,
    train,
    train_lm,
    train_translator,
)

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "average_checkpoints",
    "checkpoint_bytes",
    "load_checkpoint",
    "parse_checkpoint",
    "save_checkpoint",
    "label_smoothed_loss",
    "label_smoothed_nll",
    "smoothed_targets",
    "build_from_checkpoint",
    "build_lm_from_checkpoint",
    "decode_corpus",
    "select_models",
    "tune_lambda",
    "LOG_HEADER",
    "EpochRecord",
    "LanguageModelObjective",
    "Renderer",
    "TrainConfig",
    "TrainingDiverged",
    "TrainResult",
    "TranslationObjective",
    "fit",
    "global_norm",
    "sgd_step",
    "train",
    "train_lm",
    "train_translator",
]
