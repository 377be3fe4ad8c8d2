from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Mapping, Sequence

from ..errors import ConfigError

CLASS_WEIGHT_MODES = ("inverse_frequency",)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    pretrain_epochs: int = 10
    seed: int = 1234
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # None, "inverse_frequency", or ten explicit per-class weights
    class_weights: str | tuple[float, ...] | None = None
    workers: int = 0

    def __post_init__(self):
        if self.class_weights is not None and not isinstance(self.class_weights, str):
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    def validate(self) -> None:
        problems = []
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            problems.append("adam_beta1 and adam_beta2 must lie in (0, 1)")
        if not self.adam_eps > 0:
            problems.append("adam_eps must be > 0")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            problems.append("epoch counts must be >= 0")
        if self.workers < 0:
            problems.append("workers must be >= 0")
        cw = self.class_weights
        if isinstance(cw, str) and cw not in CLASS_WEIGHT_MODES:
            problems.append(f"class_weights must be a list or one of {CLASS_WEIGHT_MODES}, got {cw!r}")
        if isinstance(cw, Sequence) and not isinstance(cw, str):
            if len(cw) != 10 or min(cw) < 0 or sum(cw) <= 0:
                problems.append("explicit class_weights need ten non-negative values with a positive sum")
        if problems:
            raise ConfigError("invalid TrainConfig: " + "; ".join(problems), problems=problems)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if isinstance(self.class_weights, tuple):
            d["class_weights"] = list(self.class_weights)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}", keys=sorted(unknown))
        return cls(**data)
