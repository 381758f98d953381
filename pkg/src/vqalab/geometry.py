"""Axis-aligned box arithmetic: IoU, greedy NMS, GT matching, perturbation.

Boxes are corner tuples (x1, y1, x2, y2) normalized into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"degenerate corners: {self}")
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"coordinate outside [0,1]: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(boxes: list[Box], scores, threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    Keeps a box iff its IoU with every already-kept box is <= threshold,
    visiting boxes in descending score order (ties: lower original index
    first). Returns kept indices in that visiting order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != scores.shape[0]:
        raise ValueError(f"{len(boxes)} boxes vs {scores.shape[0]} scores")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= threshold for j in kept):
            kept.append(i)
    return kept


def match_gt(proposals: list[Box], gt: list[Box], iou_threshold: float) -> np.ndarray:
    """Binary labels: 1 iff a proposal overlaps some GT box at or above threshold."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0,1]: {iou_threshold}")
    labels = np.zeros(len(proposals), dtype=np.int64)
    for i, p in enumerate(proposals):
        if gt and max(iou(p, g) for g in gt) >= iou_threshold:
            labels[i] = 1
    return labels


def perturb_box(b: Box, rng: np.random.Generator) -> Box:
    """Translate each axis by U[-side/2, +side/2], clamping into [0,1].

    Width and height are preserved unless clamping truncates at the border.
    """
    dx = rng.uniform(-b.width / 2.0, b.width / 2.0) if b.width > 0 else 0.0
    dy = rng.uniform(-b.height / 2.0, b.height / 2.0) if b.height > 0 else 0.0
    return Box(
        min(max(b.x1 + dx, 0.0), 1.0),
        min(max(b.y1 + dy, 0.0), 1.0),
        min(max(b.x2 + dx, 0.0), 1.0),
        min(max(b.y2 + dy, 0.0), 1.0),
    )
