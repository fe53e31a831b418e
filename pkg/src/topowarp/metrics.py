"""Overlap scores and per-case aggregation in the mean ± / best table layout."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .grids import MaskGrid

SCORES = ("dice", "iou")
_LABELS = {"dice": "Dice", "iou": "IoU"}


def _pair(a, b):
    a = a.as_bool() if isinstance(a, MaskGrid) else np.asarray(a) > 0
    b = b.as_bool() if isinstance(b, MaskGrid) else np.asarray(b) > 0
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice_score(a, b) -> float:
    """``2|A&B| / (|A| + |B|)``; 1 when both masks are empty."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def iou_score(a, b) -> float:
    """``|A&B| / |A or B|``; 1 when both masks are empty."""
    a, b = _pair(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


@dataclass(frozen=True)
class ScoreRow:
    case: str
    dice: float
    iou: float
    topology_ok: bool


@dataclass(frozen=True)
class Aggregate:
    mean: float
    stderr: float
    stddev: float
    best: float


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple
    aggregates: dict  # score name -> Aggregate

    @property
    def topology_ok_rate(self) -> float:
        return sum(r.topology_ok for r in self.rows) / len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case", "dice", "iou", "topology_ok"])
        for r in self.rows:
            w.writerow([r.case, repr(r.dice), repr(r.iou), str(r.topology_ok).lower()])
        return buf.getvalue()

    def render(self, spread: str = "stderr") -> str:
        """Percent table, two decimals: ``mean ± spread`` and ``Best`` per score."""
        if spread not in ("stderr", "stddev"):
            raise ValueError("spread must be 'stderr' or 'stddev'")
        lines = [f"{'Score':<8}{'Mean ± ' + spread:>22}{'Best':>10}"]
        for name in SCORES:
            agg = self.aggregates[name]
            cell = f"{100 * agg.mean:.2f} ± {100 * getattr(agg, spread):.2f}"
            lines.append(f"{_LABELS[name]:<8}{cell:>22}{100 * agg.best:>10.2f}")
        lines.append(f"{'Topology ok':<19}{self.topology_ok_rate * 100:>11.2f}%  ({len(self.rows)} cases)")
        return "\n".join(lines) + "\n"


def _aggregate(values) -> Aggregate:
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
    return Aggregate(mean=mean, stderr=sd / np.sqrt(n), stddev=sd, best=float(np.max(v)))


def aggregate(rows) -> ScoreTable:
    rows = tuple(rows)
    if not rows:
        raise ValueError("cannot aggregate an empty set of rows")
    aggs = {name: _aggregate([getattr(r, name) for r in rows]) for name in SCORES}
    return ScoreTable(rows, aggs)
