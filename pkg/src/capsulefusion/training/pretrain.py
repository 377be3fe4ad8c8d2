"""Reconstruction pretraining of the U-Net on corrupted inputs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..corruption import CorruptionKind, CorruptionSpec, corrupt_batch, reconstruction_loss
from ..data import DatasetManifest, ImageLoader, make_batches
from ..errors import DataError, DivergenceError
from ..models import UNetModel, psnr_from_mse
from ..rng import STREAM_CORRUPTION, STREAM_VALIDATION, make_rng
from ..tensor import Tape, Tensor, backward
from .adam import Adam
from .checkpoint import Checkpoint, snapshot
from .config import TrainConfig

log = logging.getLogger("capsulefusion.training")


@dataclass
class PretextReport:
    kind: CorruptionKind
    final_val_mse: float
    final_val_psnr: float
    baseline_mse: float
    best_val_mse: float
    best_epoch: int
    curve: list[dict[str, float]] = field(default_factory=list)
    spec: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "final_val_mse": self.final_val_mse,
            "final_val_psnr": self.final_val_psnr,
            "baseline_mse": self.baseline_mse,
            "best_val_mse": self.best_val_mse,
            "best_epoch": self.best_epoch,
            "curve": self.curve,
            "spec": self.spec,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PretextReport":
        try:
            return cls(
                kind=CorruptionKind(data["kind"]),
                final_val_mse=float(data["final_val_mse"]),
                final_val_psnr=float(data["final_val_psnr"]),
                baseline_mse=float(data["baseline_mse"]),
                best_val_mse=float(data["best_val_mse"]),
                best_epoch=int(data["best_epoch"]),
                curve=list(data.get("curve", [])),
                spec=dict(data.get("spec", {})),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"malformed pretext report: {exc}") from exc

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PretextReport":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a JSON pretext report ({exc})", path=str(path)) from exc
        return cls.from_dict(data)


def reconstruction_mse(
    model: UNetModel,
    manifest: DatasetManifest,
    spec: CorruptionSpec,
    seed: int,
    batch_size: int,
    loader: ImageLoader | None = None,
) -> tuple[float, float]:
    """(model MSE, corrupted-input MSE) against the clean images over every pixel.

    The validation corruption is drawn from a fixed stream, so every epoch scores the same inputs.
    """
    model.eval()
    rng = make_rng(seed, STREAM_VALIDATION)
    sq_model = sq_input = 0.0
    count = 0
    for batch in make_batches(manifest, batch_size, None, loader=loader):
        corrupted, _ = corrupt_batch(batch.images, spec, rng)
        prediction = model(Tensor(corrupted)).data
        clean = batch.images.astype(np.float64)
        sq_model += float(np.sum((prediction.astype(np.float64) - clean) ** 2))
        sq_input += float(np.sum((corrupted.astype(np.float64) - clean) ** 2))
        count += clean.size
    return sq_model / count, sq_input / count


def pretrain(
    model: UNetModel,
    train: DatasetManifest,
    val: DatasetManifest,
    pretext: CorruptionSpec,
    config: TrainConfig,
    loader: ImageLoader | None = None,
) -> tuple[Checkpoint, PretextReport]:
    """Train ``model`` to undo ``pretext``; returns the best-validation checkpoint and its report.

    ``model`` is left holding the best weights.
    """
    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise DataError("pretraining needs non-empty train and validation sets")
    loader = loader or ImageLoader()
    optimizer = Adam.from_config(model.named_parameters(), config)

    val_mse, baseline = reconstruction_mse(model, val, pretext, config.seed, config.batch_size, loader)
    best = (val_mse, 0, snapshot(model, "unet", model.config.to_dict(), optimizer=optimizer.state))
    log.info("[%s] initial val MSE %.6f, corrupted-input baseline %.6f", pretext.kind.value, val_mse, baseline)

    curve = []
    for epoch in range(1, config.pretrain_epochs + 1):
        model.train()
        rng = make_rng(config.seed, STREAM_CORRUPTION, epoch)
        total, seen = 0.0, 0
        for b, batch in enumerate(make_batches(train, config.batch_size, config.seed, epoch=epoch,
                                               loader=loader, workers=config.workers)):
            corrupted, masks = corrupt_batch(batch.images, pretext, rng)
            with Tape() as tape:
                prediction = model(Tensor(corrupted))
                loss = reconstruction_loss(prediction, Tensor(batch.images), masks, pretext.policy)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"pretraining diverged at epoch {epoch}, batch {b} (loss {value})",
                    epoch=epoch, batch=b, pretext=pretext.kind.value,
                )
            optimizer.zero_grad()
            backward(tape, loss)
            optimizer.step()
            total += value * len(batch)
            seen += len(batch)

        val_mse, _ = reconstruction_mse(model, val, pretext, config.seed, config.batch_size, loader)
        row = {"epoch": epoch, "train_loss": total / seen, "val_mse": val_mse, "val_psnr": psnr_from_mse(val_mse)}
        curve.append(row)
        log.info("[%s] epoch %d: train loss %.6f, val MSE %.6f, PSNR %.2f dB",
                 pretext.kind.value, epoch, row["train_loss"], val_mse, row["val_psnr"])
        if val_mse < best[0]:
            best = (val_mse, epoch, snapshot(model, "unet", model.config.to_dict(), optimizer=optimizer.state))

    best_mse, best_epoch, checkpoint = best
    checkpoint.metadata.update({
        "epoch": best_epoch,
        "seed": config.seed,
        "pretext": pretext.to_dict(),
        "val_mse": best_mse,
        "train_losses": [r["train_loss"] for r in curve],
    })
    checkpoint.restore(model)
    report = PretextReport(
        kind=pretext.kind,
        final_val_mse=best_mse,
        final_val_psnr=psnr_from_mse(best_mse),
        baseline_mse=baseline,
        best_val_mse=best_mse,
        best_epoch=best_epoch,
        curve=curve,
        spec=pretext.to_dict(),
    )
    return checkpoint, report
