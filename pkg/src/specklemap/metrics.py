"""Pixel-level evaluation of fused output against ground truth.

Detections are scored as segmentation masks: the prediction is the set of
synthesized-provenance pixels in a fused frame, the reference is the glass
mask of the scene that produced it. Corpus aggregation pools pixel counts
for precision and recall and averages per-frame IoU over frames whose
reference mask is nonempty.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import StructuralError


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel-level confusion counts for one mask pair."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def pixel_confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Count per-pixel agreement between a prediction mask and ground truth.

    Raises StructuralError when the masks do not share a shape.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise StructuralError(
            f"mask shapes differ: {pred.shape} vs {gt.shape}"
        )
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def scores(c: ConfusionCounts) -> tuple[float, float, float]:
    """Return (precision, recall, iou) for one set of counts.

    Zero denominators follow conventions that reward a correct "no glass"
    output: with no predictions, precision is 1 when the reference is also
    empty and 0 otherwise; with an empty reference, recall is 1; with both
    empty, iou is 1.
    """
    if c.tp + c.fp == 0:
        precision = 1.0 if c.fn == 0 else 0.0
    else:
        precision = c.tp / (c.tp + c.fp)
    recall = 1.0 if c.tp + c.fn == 0 else c.tp / (c.tp + c.fn)
    denom = c.tp + c.fp + c.fn
    iou = 1.0 if denom == 0 else c.tp / denom
    return precision, recall, iou


@dataclass(frozen=True)
class CorpusScores:
    """Aggregated metrics over a frame sequence.

    Precision and recall pool pixel counts across every frame; miou averages
    per-frame IoU over the frames whose reference mask contains glass.
    """

    precision: float
    recall: float
    miou: float
    frames: int
    glass_frames: int


def evaluate_corpus(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]]
) -> CorpusScores:
    """Score a sequence of (prediction, ground truth) mask pairs."""
    pooled = ConfusionCounts(0, 0, 0, 0)
    ious: list[float] = []
    frames = 0
    for pred, gt in pairs:
        c = pixel_confusion(pred, gt)
        pooled = pooled + c
        frames += 1
        if c.tp + c.fn > 0:
            ious.append(scores(c)[2])
    precision, recall, _ = scores(pooled)
    miou = float(np.mean(ious)) if ious else 1.0
    return CorpusScores(precision, recall, miou, frames, len(ious))


def results_table(rows: Sequence[tuple[str, CorpusScores]]) -> str:
    """Render named corpus scores as a CSV table."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["name", "precision", "recall", "miou", "frames", "glass_frames"]
    )
    for name, s in rows:
        writer.writerow(
            [name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.miou:.4f}",
             s.frames, s.glass_frames]
        )
    return buf.getvalue()
