"""The ten capsule-endoscopy classes and their stable integer ids."""
from __future__ import annotations

from ..errors import DataError

CLASS_NAMES: tuple[str, ...] = (
    "angioectasia",
    "bleeding",
    "erosion",
    "erythema",
    "foreign body",
    "lymphangiectasia",
    "normal",
    "polyp",
    "ulcer",
    "worms",
)
NUM_CLASSES = len(CLASS_NAMES)
_BY_NAME = {name: i for i, name in enumerate(CLASS_NAMES)}


def parse_label(value: str) -> int:
    """Case-insensitive class name → id; surrounding whitespace is ignored."""
    key = " ".join(str(value).strip().lower().split())
    try:
        return _BY_NAME[key]
    except KeyError:
        raise DataError(f"unknown class label {value!r}", label=value, valid=list(CLASS_NAMES)) from None


def class_name(index: int) -> str:
    if not 0 <= index < NUM_CLASSES:
        raise DataError(f"class id {index} outside [0, {NUM_CLASSES})", index=index)
    return CLASS_NAMES[index]


def dir_name(index: int) -> str:
    """Directory-safe class name used by the synthetic layout ("foreign body" → "foreign_body")."""
    return class_name(index).replace(" ", "_")
