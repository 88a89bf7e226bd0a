"""Accuracy / TP rate / FP rate, ROC curves and AUROC, plus report writers."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import EnvironmentClass, MotionClass


@dataclass(frozen=True)
class PredictionRecord:
    score_on: float
    true_y: int
    z: int = -1
    v: int = -1

    def __post_init__(self):
        if not 0.0 <= self.score_on <= 1.0:
            raise ValueError(f"score {self.score_on} outside [0, 1]")


def records_from_arrays(scores, y, z=None, v=None) -> list[PredictionRecord]:
    n = len(scores)
    z = z if z is not None else [-1] * n
    v = v if v is not None else [-1] * n
    return [PredictionRecord(float(s), int(a), int(b), int(c)) for s, a, b, c in zip(scores, y, z, v)]


@dataclass(frozen=True)
class Rates:
    n: int
    accuracy: float
    tp_rate: float | None
    fp_rate: float | None

    def to_json(self) -> dict:
        return {"n": self.n, "accuracy": self.accuracy, "tp_rate": self.tp_rate, "fp_rate": self.fp_rate}


def rates(records: Sequence[PredictionRecord], threshold: float = 0.5) -> Rates:
    """Rates at ``threshold``; a segment is accepted as on-body only if its
    score is strictly above the threshold, so a 0.5 score is denied."""
    if not records:
        raise ValueError("no records")
    y = np.array([r.true_y for r in records])
    accepted = np.array([r.score_on > threshold for r in records])
    n_on, n_off = int((y == 1).sum()), int((y == 0).sum())
    return Rates(
        n=len(records),
        accuracy=float(np.mean(accepted == (y == 1))),
        tp_rate=float(accepted[y == 1].mean()) if n_on else None,
        fp_rate=float(accepted[y == 0].mean()) if n_off else None,
    )


def metrics(records: Sequence[PredictionRecord], threshold: float = 0.5) -> dict:
    """Overall rates plus breakdowns by motion and environment label."""
    overall = rates(records, threshold)
    by_motion, by_env = {}, {}
    for key, table, attr, names in (("z", by_motion, "z", MotionClass), ("v", by_env, "v", EnvironmentClass)):
        for value in sorted({getattr(r, attr) for r in records}):
            group = [r for r in records if getattr(r, attr) == value]
            label = names(value).label if value >= 0 else "unknown"
            table[label] = rates(group, threshold)
    return {"overall": overall, "by_motion": by_motion, "by_environment": by_env}


def metrics_json(m: dict, auroc_value: float | None = None) -> dict:
    out = {
        "overall": m["overall"].to_json(),
        "by_motion": {k: r.to_json() for k, r in m["by_motion"].items()},
        "by_environment": {k: r.to_json() for k, r in m["by_environment"].items()},
    }
    if auroc_value is not None:
        out["auroc"] = auroc_value
    return out


def _split(records: Iterable[PredictionRecord]):
    scores = np.array([r.score_on for r in records], dtype=np.float64)
    y = np.array([r.true_y for r in records], dtype=np.int64)
    if not (y == 1).any() or not (y == 0).any():
        raise ValueError("ROC needs both on-body and off-body records")
    return scores, y


def roc(records: Sequence[PredictionRecord]) -> list[tuple[float, float, float]]:
    """(threshold, fp_rate, tp_rate) points, from +inf down to -inf.

    Each distinct score is one threshold step (accept score >= threshold),
    so tied on/off scores move the curve diagonally.
    """
    scores, y = _split(records)
    n_on, n_off = int((y == 1).sum()), int((y == 0).sum())
    order = np.argsort(-scores, kind="mergesort")
    scores, y = scores[order], y[order]
    points = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[j] == scores[i]:
            tp += y[j] == 1
            fp += y[j] == 0
            j += 1
        points.append((float(scores[i]), fp / n_off, tp / n_on))
        i = j
    points.append((-math.inf, 1.0, 1.0))
    return points


def auroc(curve: Sequence[tuple[float, float, float]]) -> float:
    """Trapezoid area under (fp_rate, tp_rate)."""
    area = 0.0
    for (_, x0, y0), (_, x1, y1) in zip(curve[:-1], curve[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return area


def pair_statistic(records: Sequence[PredictionRecord]) -> float:
    """P(score_on > score_off) + P(tie)/2 by direct enumeration of all pairs."""
    scores, y = _split(records)
    on, off = scores[y == 1], scores[y == 0]
    total = 0.0
    for s in on:
        for t in off:
            total += 1.0 if s > t else 0.5 if s == t else 0.0
    return total / (len(on) * len(off))


# ---------------------------------------------------------------- writers

def write_roc_csv(curve, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fp_rate", "tp_rate"])
        for thr, fpr, tpr in curve:
            w.writerow([repr(thr), repr(fpr), repr(tpr)])


def write_metrics_json(report: dict, path: Path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _svg(width: int, height: int, body: list[str]) -> str:
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        *body, "</svg>", ""])


def roc_svg(curve, auroc_value: float, size: int = 320) -> str:
    pad = 40
    span = size - 2 * pad

    def xy(fpr, tpr):
        return f"{pad + fpr * span:.2f},{size - pad - tpr * span:.2f}"

    pts = " ".join(xy(f, t) for _, f, t in curve)
    return _svg(size, size, [
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="gray" stroke-dasharray="4 4"/>',
        f'<polyline points="{pts}" fill="none" stroke="blue" stroke-width="2"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">FP rate</text>',
        f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})" '
        f'text-anchor="middle">TP rate</text>',
        f'<text x="{size / 2}" y="24" text-anchor="middle" font-size="13">AUROC = {auroc_value:.4f}</text>',
    ])


def bars_svg(table: dict[str, Rates], title: str, width: int = 480, height: int = 260) -> str:
    """Grouped bars of accuracy / TP rate / FP rate per group."""
    pad = 40
    groups = list(table)
    slot = (width - 2 * pad) / max(1, len(groups))
    bar = slot / 4
    colours = (("accuracy", "steelblue"), ("tp_rate", "seagreen"), ("fp_rate", "indianred"))
    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
            f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>']
    for gi, name in enumerate(groups):
        r = table[name].to_json()
        for bi, (key, colour) in enumerate(colours):
            val = r[key]
            if val is None:
                continue
            h = val * (height - 2 * pad)
            x = pad + gi * slot + bi * bar + bar / 2
            body.append(f'<rect x="{x:.2f}" y="{height - pad - h:.2f}" width="{bar:.2f}" '
                        f'height="{h:.2f}" fill="{colour}"/>')
        body.append(f'<text x="{pad + (gi + 0.5) * slot:.2f}" y="{height - pad + 14}" '
                    f'text-anchor="middle" font-size="10">{name}</text>')
    return _svg(width, height, body)
