"""Classifier training for the four model variants."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..data import DatasetManifest, ImageLoader, compute_channel_stats, make_batches
from ..errors import DataError, DivergenceError, KindMismatchError
from ..metrics import balanced_accuracy, confusion
from ..models import (
    BackboneConfig,
    FusedModel,
    FusionConfig,
    UNetConfig,
    build_fused_model,
    build_unet,
    classify_forward,
    predict,
)
from ..tensor import Tape, Tensor, backward, softmax_cross_entropy
from .adam import Adam
from .checkpoint import Checkpoint, check_config, snapshot
from .config import TrainConfig

log = logging.getLogger("capsulefusion.training")


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    curve: list[dict[str, float]] = field(default_factory=list)
    model: FusedModel | None = None


def inverse_frequency_weights(counts: Sequence[int]) -> np.ndarray:
    """w_c = N / (K · n_c) over the K classes present; absent classes get 0."""
    counts = np.asarray(counts, dtype=np.float64)
    present = counts > 0
    if not present.any():
        raise DataError("no class has any samples")
    weights = np.zeros_like(counts)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


def resolve_class_weights(config: TrainConfig, counts: Sequence[int]) -> np.ndarray | None:
    if config.class_weights is None:
        return None
    if config.class_weights == "inverse_frequency":
        return inverse_frequency_weights(counts)
    return np.asarray(config.class_weights, dtype=np.float64)


def best_epoch(balanced_accuracies: Sequence[float]) -> int:
    """1-based epoch of the first strict maximum; 0 for an empty history."""
    best, best_value = 0, -math.inf
    for i, value in enumerate(balanced_accuracies, start=1):
        if value > best_value:
            best, best_value = i, value
    return best


def evaluate(
    model: FusedModel,
    manifest: DatasetManifest,
    batch_size: int = 16,
    loader: ImageLoader | None = None,
    workers: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """(labels, predictions) over ``manifest`` in manifest order, with the model in eval mode."""
    model.eval()
    labels, predictions = [], []
    for batch in make_batches(manifest, batch_size, None, loader=loader, workers=workers):
        labels.append(batch.labels)
        predictions.append(predict(model, Tensor(batch.images)))
    return np.concatenate(labels), np.concatenate(predictions)


def model_config(model: FusedModel, unet_config: UNetConfig, backbone_config: BackboneConfig,
                 image_size: int | None) -> dict[str, Any]:
    return {
        "fusion": model.config.to_dict(),
        "unet": unet_config.to_dict(),
        "backbone": backbone_config.to_dict(),
        "image_size": image_size,
    }


def model_from_checkpoint(checkpoint: Checkpoint) -> tuple[FusedModel, int | None]:
    """Rebuild a FusedModel from a ``fused`` checkpoint; returns it with the stored image size."""
    cfg = checkpoint.config
    fusion = FusionConfig.from_dict(cfg["fusion"])
    unet_config = UNetConfig.from_dict(cfg["unet"])
    backbone_config = BackboneConfig.from_dict(cfg["backbone"])
    model = build_fused_model(fusion, unet_config, backbone_config, int(checkpoint.metadata.get("seed", 0)))
    checkpoint.restore(model)
    model.apply_freeze()
    model.eval()
    return model, cfg.get("image_size")


def train_classifier(
    fusion: FusionConfig,
    unet_config: UNetConfig,
    backbone_config: BackboneConfig,
    train: DatasetManifest,
    val: DatasetManifest,
    config: TrainConfig,
    pretrained: Checkpoint | None = None,
    image_size: int | None = None,
    loader: ImageLoader | None = None,
) -> TrainingResult:
    """Train one variant; the checkpoint holds the epoch with the best validation balanced accuracy."""
    config.validate()
    fusion.validate()
    if len(train) == 0 or len(val) == 0:
        raise DataError("classifier training needs non-empty train and validation sets")
    loader = loader or ImageLoader(image_size)

    unet = None
    if fusion.needs_unet:
        unet = build_unet(unet_config, config.seed)
        if pretrained is not None:
            if pretrained.kind != "unet":
                raise KindMismatchError(
                    f"pretrained checkpoint holds a {pretrained.kind} model, expected unet",
                    kind=pretrained.kind, expected="unet",
                )
            check_config(pretrained, unet_config.to_dict())
            pretrained.restore(unet)
            log.info("Loaded pretrained U-Net (epoch %s)", pretrained.metadata.get("epoch"))
        elif fusion.freeze_encoder:
            log.warning("U-Net is frozen but no pretrained weights were given; it stays at initialization")
    model = build_fused_model(fusion, unet_config, backbone_config, config.seed, unet=unet)
    stats = compute_channel_stats(train, loader=loader)
    model.set_input_stats(stats.mean, stats.std)

    weights = resolve_class_weights(config, train.counts)
    optimizer = Adam.from_config(model.named_parameters(), config)
    frozen = sum(p.size for p in model.parameters() if not p.requires_grad)
    log.info("Training %s: %d trainable / %d frozen parameters",
             fusion.variant.value, model.num_parameters() - frozen, frozen)
    cfg_echo = model_config(model, unet_config, backbone_config, image_size)

    def scores(manifest):
        y, p = evaluate(model, manifest, config.batch_size, loader)
        cm = confusion(y, p)
        return float(np.mean(y == p)), balanced_accuracy(cm)

    train_acc, _ = scores(train)
    val_acc, val_bal = scores(val)
    meta = {"epoch": 0, "seed": config.seed, "variant": fusion.variant.value, "train_accuracy": train_acc,
            "val_accuracy": val_acc, "val_balanced_accuracy": val_bal}
    best = snapshot(model, "fused", cfg_echo, meta, optimizer.state)
    best_value = -math.inf

    curve: list[dict[str, float]] = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        total, seen = 0.0, 0
        for b, batch in enumerate(make_batches(train, config.batch_size, config.seed, epoch=epoch,
                                               loader=loader, workers=config.workers)):
            with Tape() as tape:
                logits = classify_forward(model, Tensor(batch.images))
                loss = softmax_cross_entropy(logits, batch.labels, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"classifier training diverged at epoch {epoch}, batch {b} (loss {value})",
                    epoch=epoch, batch=b, variant=fusion.variant.value,
                )
            optimizer.zero_grad()
            backward(tape, loss)
            optimizer.step()
            total += value * len(batch)
            seen += len(batch)

        train_acc, _ = scores(train)
        val_acc, val_bal = scores(val)
        row = {"epoch": epoch, "train_loss": total / seen, "train_accuracy": train_acc,
               "val_accuracy": val_acc, "val_balanced_accuracy": val_bal}
        curve.append(row)
        log.info("[%s] epoch %d: loss %.5f, train acc %.4f, val acc %.4f, val balanced acc %.4f",
                 fusion.variant.value, epoch, row["train_loss"], train_acc, val_acc, val_bal)
        if val_bal > best_value:
            best_value = val_bal
            meta = dict(row, seed=config.seed, variant=fusion.variant.value)
            meta.pop("train_loss")
            best = snapshot(model, "fused", cfg_echo, meta, optimizer.state)

    best.metadata["train_losses"] = [r["train_loss"] for r in curve]
    best.restore(model)
    model.eval()
    return TrainingResult(best, curve, model)
