"""Label manifests: ``filename,label`` CSV files listing images relative to a root directory."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ..errors import ConfigError, DataError
from ..rng import STREAM_SPLIT, make_rng
from ..utils import round_half_up
from .labels import CLASS_NAMES, NUM_CLASSES, parse_label

log = logging.getLogger("capsulefusion.data")

MANIFEST_COLUMNS = ["filename", "label"]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise DataError(f"duplicate filename {e.path!r} in manifest", filename=e.path)
            seen.add(e.path)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def counts(self) -> list[int]:
        counts = np.bincount(self.labels, minlength=NUM_CLASSES)
        return [int(c) for c in counts]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def paths(self) -> list[Path]:
        return [self.root / e.path for e in self.entries]

    def subset(self, indices: Iterable[int]) -> "DatasetManifest":
        return DatasetManifest(self.root, tuple(self.entries[i] for i in indices))


def load_manifest(csv_path: str | Path, root: str | Path | None = None) -> DatasetManifest:
    """Read and validate a manifest; image paths resolve against ``root`` (default: the CSV's folder)."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"manifest not found: {csv_path}", path=str(csv_path))
    try:
        df = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"manifest {csv_path} is empty", path=str(csv_path)) from None
    except (UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"manifest {csv_path} is not a valid UTF-8 CSV: {exc}", path=str(csv_path)) from exc

    columns = [c.strip() for c in df.columns]
    if columns != MANIFEST_COLUMNS:
        raise DataError(
            f"manifest {csv_path} header must be 'filename,label', got {','.join(columns)!r}",
            path=str(csv_path), header=columns,
        )
    df.columns = columns
    if df.empty:
        raise DataError(f"manifest {csv_path} has no entries", path=str(csv_path))

    entries = []
    seen: dict[str, int] = {}
    for offset, (filename, label) in enumerate(zip(df["filename"], df["label"])):
        row = offset + 1
        filename = filename.strip()
        if not filename:
            raise DataError(f"{csv_path} row {row}: empty filename", path=str(csv_path), row=row)
        try:
            label_id = parse_label(label)
        except DataError:
            raise DataError(
                f"{csv_path} row {row}: unknown label {label!r}",
                path=str(csv_path), row=row, label=label, valid=list(CLASS_NAMES),
            ) from None
        if filename in seen:
            raise DataError(
                f"{csv_path} row {row}: duplicate filename {filename!r} (first seen on row {seen[filename]})",
                path=str(csv_path), row=row, filename=filename,
            )
        seen[filename] = row
        entries.append(ManifestEntry(filename, label_id))

    manifest = DatasetManifest(Path(root) if root is not None else csv_path.parent, tuple(entries))
    log.info("Loaded %d entries from %s", len(manifest), csv_path)
    return manifest


def write_manifest(manifest: DatasetManifest | Sequence[ManifestEntry], csv_path: str | Path) -> Path:
    entries = manifest.entries if isinstance(manifest, DatasetManifest) else manifest
    csv_path = Path(csv_path)
    df = pd.DataFrame(
        [(e.path, CLASS_NAMES[e.label]) for e in entries], columns=MANIFEST_COLUMNS
    )
    df.to_csv(csv_path, index=False, encoding="utf-8", lineterminator="\n")
    return csv_path


def split(manifest: DatasetManifest, val_fraction: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified train/validation split.

    Each class gives exactly ``round(count · val_fraction)`` entries (halves up) to validation,
    chosen by a seeded shuffle. Both halves keep the manifest's original entry order. A split
    that leaves either half empty is a ``DataError``.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}", val_fraction=val_fraction)
    labels = manifest.labels
    rng = make_rng(seed, STREAM_SPLIT)
    val_idx: list[int] = []
    for label in range(NUM_CLASSES):
        members = np.flatnonzero(labels == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise DataError(
                f"class {CLASS_NAMES[label]!r} has {members.size} entry; a split needs at least 2",
                label=CLASS_NAMES[label], count=int(members.size),
            )
        n_val = round_half_up(members.size * val_fraction)
        val_idx.extend(int(i) for i in rng.permutation(members)[:n_val])
    val_set = set(val_idx)
    train = manifest.subset(i for i in range(len(manifest)) if i not in val_set)
    val = manifest.subset(sorted(val_set))
    if not len(train) or not len(val):
        raise DataError(
            f"val_fraction {val_fraction} leaves {len(train)} train and {len(val)} validation entries",
            val_fraction=val_fraction, train=len(train), val=len(val),
        )
    log.info("Split %d entries into %d train / %d validation", len(manifest), len(train), len(val))
    return train, val
