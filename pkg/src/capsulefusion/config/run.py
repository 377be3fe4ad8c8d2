"""Run configuration: one declarative mapping describing a whole experiment.

Files are YAML (JSON loads through the same parser). Sections::

    seed, output_dir, data, pretexts, unet, backbone, fusion, train

``--set section.key=value`` overrides any key; values are parsed as YAML scalars.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ..corruption import CorruptionKind, CorruptionSpec
from ..data.synthetic import SyntheticSpec
from ..errors import CapsuleFusionError, ConfigError
from ..models import BackboneConfig, FusionConfig, UNetConfig
from ..training.config import TrainConfig
from . import settings

log = logging.getLogger("capsulefusion.config")

SECTIONS = ("seed", "output_dir", "data", "pretexts", "unet", "backbone", "fusion", "train")
SYNTHETIC_DIR = "data"
PATHS_FILE = Path("configs") / "paths.yaml"


def _default_pretexts() -> tuple[CorruptionSpec, ...]:
    return (
        CorruptionSpec(kind=CorruptionKind.PATCH_MASK, patch_size=8, mask_ratio=0.5),
        CorruptionSpec(kind=CorruptionKind.GAUSSIAN_NOISE, sigma=0.1),
    )


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    # image directory for ``manifest``; defaults to the manifest's own directory
    root: str | None = None
    synthetic: SyntheticSpec | None = None
    image_size: int | None = 64
    val_fraction: float = 0.2
    workers: int = settings.WORKERS

    @property
    def is_synthetic(self) -> bool:
        return self.manifest is None

    def validate(self) -> None:
        if self.manifest is not None and self.synthetic is not None:
            raise ConfigError("data: give either manifest or synthetic, not both")
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise ConfigError(f"data.manifest {self.manifest} does not exist", path=self.manifest)
        if self.root is not None and not Path(self.root).is_dir():
            raise ConfigError(f"data.root {self.root} is not a directory", path=self.root)
        if self.image_size is not None and self.image_size < 4:
            raise ConfigError(f"data.image_size must be >= 4, got {self.image_size}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"data.val_fraction {self.val_fraction} outside (0, 1)")
        if self.workers < 0:
            raise ConfigError("data.workers must be >= 0")
        if self.synthetic is not None:
            self.synthetic.validate()

    def to_dict(self) -> dict[str, Any]:
        synthetic = None
        if self.synthetic is not None:
            s = self.synthetic
            synthetic = {"per_class": s.per_class if isinstance(s.per_class, int) else list(s.per_class),
                         "size": s.size, "seed": s.seed, "noise": s.noise}
        return {"manifest": self.manifest, "root": self.root, "synthetic": synthetic,
                "image_size": self.image_size, "val_fraction": self.val_fraction, "workers": self.workers}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DataConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown data keys: {sorted(unknown)}", keys=sorted(unknown))
        values = dict(data)
        if values.get("synthetic") is not None:
            values["synthetic"] = SyntheticSpec.from_dict(values["synthetic"])
        return cls(**values)


@dataclass(frozen=True)
class RunConfig:
    seed: int = settings.DEFAULT_SEED
    output_dir: Path = Path(settings.RUNS_DIR)
    data: DataConfig = field(default_factory=DataConfig)
    pretexts: tuple[CorruptionSpec, ...] = field(default_factory=_default_pretexts)
    unet: UNetConfig = field(default_factory=UNetConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def synthetic_spec(self) -> SyntheticSpec:
        """Generator settings for synthetic runs; the run seed and image size fill in what the file leaves out."""
        if self.data.synthetic is not None:
            return self.data.synthetic
        return SyntheticSpec(size=self.data.image_size or 64, seed=self.seed)

    @property
    def synthetic_dir(self) -> Path:
        return self.output_dir / SYNTHETIC_DIR

    @property
    def manifest_path(self) -> Path:
        if self.data.manifest is not None:
            return Path(self.data.manifest)
        return self.synthetic_dir / "labels.csv"

    @property
    def image_root(self) -> Path:
        if self.data.root is not None:
            return Path(self.data.root)
        return self.manifest_path.parent

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.unet.validate()
        self.backbone.validate()
        self.fusion.validate()
        self.train.validate()
        if not self.pretexts:
            raise ConfigError("at least one pretext corruption is required")
        kinds = [p.kind for p in self.pretexts]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("pretext kinds must be distinct", kinds=[k.value for k in kinds])
        size = self.data.image_size or (self.synthetic_spec.size if self.data.is_synthetic else None)
        if size is not None:
            try:
                self.unet.check_input(size, size)
                for pretext in self.pretexts:
                    pretext.check_image(size, size)
            except CapsuleFusionError as exc:
                raise ConfigError(f"image size {size}: {exc}", image_size=size) from exc
            step = self.backbone.cumulative_stride
            if size % step:
                raise ConfigError(f"image size {size} not divisible by backbone stride {step}",
                                  image_size=size, stride=step)
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "data": self.data.to_dict(),
            "pretexts": [p.to_dict() for p in self.pretexts],
            "unet": self.unet.to_dict(),
            "backbone": self.backbone.to_dict(),
            "fusion": self.fusion.to_dict(),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}", keys=sorted(unknown))
        for name in ("data", "unet", "backbone", "fusion", "train"):
            if not isinstance(data.get(name) or {}, Mapping):
                raise ConfigError(f"section {name!r} must be a mapping", section=name)
        try:
            seed = int(data.get("seed", settings.DEFAULT_SEED))
            data_cfg = DataConfig.from_dict(data.get("data") or {})
            pretexts = data.get("pretexts")
            if pretexts is None:
                pretexts = _default_pretexts()
            elif isinstance(pretexts, Sequence) and not isinstance(pretexts, str):
                pretexts = tuple(CorruptionSpec.from_dict(p) for p in pretexts)
            else:
                raise ConfigError("pretexts must be a list of corruption mappings")
            # the run seed and data.workers apply unless train sets its own
            train = TrainConfig.from_dict(
                {"seed": seed, "workers": data_cfg.workers, **(data.get("train") or {})}
            )
            return cls(
                seed=seed,
                output_dir=Path(data.get("output_dir") or settings.RUNS_DIR),
                data=data_cfg,
                pretexts=pretexts,
                unet=UNetConfig.from_dict(data.get("unet") or {}),
                backbone=BackboneConfig.from_dict(data.get("backbone") or {}),
                fusion=FusionConfig.from_dict(data.get("fusion") or {}),
                train=train,
            )
        except CapsuleFusionError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), **exc.details) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    def with_fusion(self, **changes: Any) -> "RunConfig":
        return replace(self, fusion=replace(self.fusion, **changes))


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"train.batch_size=8"`` → (["train", "batch_size"], 8)."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form section.key=value", override=text)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: unparsable value ({exc})", override=text) from exc
    return key.strip().split("."), value


def apply_overrides(raw: Mapping[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Copy of ``raw`` with every override written in; list items are addressed by index."""
    merged = copy.deepcopy(dict(raw))
    for text in overrides:
        path, value = parse_override(text)
        if path[0] not in SECTIONS:
            raise ConfigError(f"override {text!r}: unknown section {path[0]!r}", override=text)
        node: Any = merged
        for i, part in enumerate(path[:-1]):
            if isinstance(node, list):
                node = _list_item(node, part, text)
                continue
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {'.'.join(path[:i])} is not a section", override=text)
            child = node.get(part)
            if child is None:
                child = node[part] = [] if part == "pretexts" and path[i + 1].isdigit() else {}
            node = child
        leaf = path[-1]
        if isinstance(node, list):
            index = int(leaf) if leaf.isdigit() else -1
            if not 0 <= index < len(node):
                raise ConfigError(f"override {text!r}: no list item {leaf!r}", override=text)
            node[index] = value
        elif isinstance(node, dict):
            node[leaf] = value
        else:
            raise ConfigError(f"override {text!r}: {'.'.join(path[:-1])} is not a section", override=text)
    return merged


def _list_item(items: list, part: str, text: str) -> Any:
    if not part.isdigit():
        raise ConfigError(f"override {text!r}: list index expected, got {part!r}", override=text)
    index = int(part)
    if index == len(items):
        items.append({})
    if index >= len(items):
        raise ConfigError(f"override {text!r}: no list item {index}", override=text)
    return items[index]


def resolve_profile(name: str | Path, paths_file: str | Path = PATHS_FILE) -> Path:
    """A config path, or a profile name (``desk``, ``smoke``...) looked up in ``configs/paths.yaml``."""
    path = Path(name)
    if path.is_file() or path.suffix or not Path(paths_file).is_file():
        return path
    with open(paths_file, "r", encoding="utf-8") as f:
        profiles = (yaml.safe_load(f) or {}).get("profiles") or {}
    if str(name) not in profiles:
        raise ConfigError(f"unknown profile {str(name)!r}; known: {', '.join(sorted(profiles))}",
                          profile=str(name), valid=sorted(profiles))
    return Path(profiles[str(name)])


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = resolve_profile(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found", path=str(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})", path=str(path)) from exc
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping", path=str(path))
    return dict(raw)


def load_run_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read, override, and validate a run config. ``path=None`` starts from the defaults."""
    raw = read_config_file(path) if path is not None else {}
    config = RunConfig.from_dict(apply_overrides(raw, overrides))
    log.debug("Loaded run config from %s with %d override(s)", path or "<defaults>", len(overrides))
    return config.validate()


def save_run_config(config: RunConfig, path: str | Path) -> Path:
    """Echo the resolved config next to the run's artifacts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
    return path
