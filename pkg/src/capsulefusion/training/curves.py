from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import pandas as pd

PRETRAIN_COLUMNS = ["epoch", "train_loss", "val_mse", "val_psnr"]
CLASSIFIER_COLUMNS = ["epoch", "train_loss", "train_accuracy", "val_accuracy", "val_balanced_accuracy"]


def write_curve(rows: Sequence[Mapping[str, float]], path: str | Path, columns: Sequence[str]) -> Path:
    """One CSV row per epoch; an empty curve still gets its header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def read_curve(path: str | Path) -> list[dict]:
    return pd.read_csv(path).to_dict(orient="records")
