from .adam import Adam, AdamState, adam_step
from .checkpoint import (
    FORMAT_VERSION,
    KIND_TAGS,
    MAGIC,
    Checkpoint,
    check_config,
    config_differences,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    snapshot,
)
from .classifier import (
    TrainingResult,
    best_epoch,
    evaluate,
    inverse_frequency_weights,
    model_from_checkpoint,
    resolve_class_weights,
    train_classifier,
)
from .config import TrainConfig
from .curves import CLASSIFIER_COLUMNS, PRETRAIN_COLUMNS, read_curve, write_curve
from .pretrain import PretextReport, pretrain, reconstruction_mse
from .selection import SelectionRecord, select_pretext

__all__ = [
    "Adam", "AdamState", "CLASSIFIER_COLUMNS", "Checkpoint", "FORMAT_VERSION", "KIND_TAGS", "MAGIC",
    "PRETRAIN_COLUMNS", "PretextReport", "SelectionRecord", "TrainConfig", "TrainingResult", "adam_step",
    "best_epoch", "check_config", "config_differences", "decode_checkpoint", "encode_checkpoint",
    "evaluate", "inverse_frequency_weights", "load_checkpoint", "model_from_checkpoint", "pretrain",
    "read_curve", "reconstruction_mse", "resolve_class_weights", "save_checkpoint", "select_pretext",
    "snapshot", "train_classifier", "write_curve",
]
