"""Pick the pretext whose U-Net reconstructs validation images best."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ..corruption import CorruptionKind
from ..errors import ConfigError
from .pretrain import PretextReport

log = logging.getLogger("capsulefusion.training")

# exact MSE ties resolve in this order
TIE_ORDER = (CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.PATCH_MASK, CorruptionKind.COMBINED)


@dataclass(frozen=True)
class SelectionRecord:
    winner: CorruptionKind
    compared: dict[str, float]
    rationale: str

    def to_dict(self) -> dict[str, Any]:
        return {"winner": self.winner.value, "compared": dict(self.compared), "rationale": self.rationale}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


def select_pretext(reports: Sequence[PretextReport]) -> SelectionRecord:
    if not reports:
        raise ConfigError("no pretext reports to select from")
    if len(reports) < 2:
        raise ConfigError(f"selection needs at least 2 pretext reports, got {len(reports)}", count=len(reports))
    compared: dict[str, float] = {}
    for r in reports:
        if r.kind.value in compared:
            raise ConfigError(f"duplicate report for pretext {r.kind.value}", kind=r.kind.value)
        compared[r.kind.value] = r.final_val_mse

    lowest = min(compared.values())
    tied = [k for k in TIE_ORDER if compared.get(k.value) == lowest]
    winner = tied[0]
    ranking = ", ".join(f"{k}={v:.6g}" for k, v in sorted(compared.items(), key=lambda kv: (kv[1], kv[0])))
    rationale = f"lowest validation MSE: {ranking}"
    if len(tied) > 1:
        rationale += f"; tie between {', '.join(k.value for k in tied)} resolved toward {winner.value}"
    log.info("Selected pretext %s (%s)", winner.value, rationale)
    return SelectionRecord(winner, dict(sorted(compared.items())), rationale)
