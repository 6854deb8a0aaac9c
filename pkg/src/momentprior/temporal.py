"""Temporal spans and the 1-D IoU / GIoU primitives.

Spans are stored as ``(center, width)``; ``(start, end)`` is only used for
I/O. Units are whatever the caller uses (seconds or fractions of the video)
as long as they are consistent within one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Span:
    center: float
    width: float

    def __post_init__(self):
        if not self.width >= 0:
            raise ValueError(f"span width must be non-negative, got {self.width}")

    @property
    def start(self) -> float:
        return self.center - self.width / 2

    @property
    def end(self) -> float:
        return self.center + self.width / 2

    def to_interval(self) -> tuple[float, float]:
        return to_interval(self)

    def shifted(self, offset: float) -> "Span":
        return Span(self.center + offset, self.width)

    def scaled(self, factor: float) -> "Span":
        return Span(self.center * factor, self.width * factor)


def to_interval(span: Span) -> tuple[float, float]:
    return span.center - span.width / 2, span.center + span.width / 2


def from_interval(start: float, end: float) -> Span:
    if start > end:
        raise ValueError(f"interval start {start} is after end {end}")
    return Span((start + end) / 2, end - start)


def spans_to_array(spans: Iterable[Span]) -> np.ndarray:
    """Stack spans into an ``(n, 2)`` array of ``[center, width]`` rows."""
    arr = np.array([[s.center, s.width] for s in spans], dtype=np.float64)
    return arr.reshape(-1, 2)


def array_to_spans(arr: np.ndarray) -> list[Span]:
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 2)
    return [Span(float(c), float(w)) for c, w in arr]


def intervals_to_spans(pairs: Sequence[Sequence[float]]) -> list[Span]:
    return [from_interval(float(s), float(e)) for s, e in pairs]


def spans_to_intervals(spans: Iterable[Span]) -> list[list[float]]:
    return [list(to_interval(s)) for s in spans]


def _overlap_terms(a: Span, b: Span):
    a0, a1 = to_interval(a)
    b0, b1 = to_interval(b)
    # endpoint rounding must not let the overlap exceed either width
    inter = min(max(0.0, min(a1, b1) - max(a0, b0)), a.width, b.width)
    union = a.width + b.width - inter
    hull = max(max(a1, b1) - min(a0, b0), union)
    return inter, union, hull


def iou(a: Span, b: Span) -> float:
    """Intersection over union of two spans.

    Spans with a zero-length hull (coinciding points) give 1.
    """
    inter, union, hull = _overlap_terms(a, b)
    if hull <= 0:
        return 1.0
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: Span, b: Span) -> float:
    """Generalized IoU: ``iou - (hull - union) / hull``.

    Lies in ``(-1, 1]``. Identical point spans (zero hull) give 1.
    """
    inter, union, hull = _overlap_terms(a, b)
    if hull <= 0:
        return 1.0
    if union <= 0:
        # two distinct point spans: the hull is all dead space
        return -1.0
    return inter / union - (hull - union) / hull


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized IoU between ``(n, 2)`` and ``(m, 2)`` center/width arrays."""
    iou_mat, _ = _pairwise(a, b, with_giou=False)
    return iou_mat


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, giou_mat = _pairwise(a, b)
    return giou_mat


def batched_pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between ``(B, n, 2)`` and ``(B, m, 2)`` arrays, giving ``(B, n, m)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]:
        raise ValueError(f"expected (B, n, 2) and (B, m, 2) arrays, got {a.shape} and {b.shape}")
    iou_mat, _ = _pairwise_terms(a[:, :, None, :], b[:, None, :, :], with_giou=False)
    return iou_mat


def _pairwise(a: np.ndarray, b: np.ndarray, with_giou: bool = True):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    return _pairwise_terms(a[:, None, :], b[None, :, :], with_giou)


def _pairwise_terms(a: np.ndarray, b: np.ndarray, with_giou: bool = True):
    """IoU and GIoU (``None`` unless ``with_giou``) of broadcast-compatible ``(..., 2)`` arrays."""
    a0 = a[..., 0] - a[..., 1] / 2
    a1 = a[..., 0] + a[..., 1] / 2
    b0 = b[..., 0] - b[..., 1] / 2
    b1 = b[..., 0] + b[..., 1] / 2
    inter = np.minimum(
        np.maximum(0.0, np.minimum(a1, b1) - np.maximum(a0, b0)),
        np.minimum(a[..., 1], b[..., 1]),
    )
    union = a[..., 1] + b[..., 1] - inter
    hull = np.maximum(np.maximum(a1, b1) - np.minimum(a0, b0), union)
    has_hull, has_union = hull > 0, union > 0
    # guarded denominators; the masked-out quotients are discarded
    u = np.where(has_union, union, 1.0)
    ratio = inter / u
    iou_mat = np.where(has_hull, np.where(has_union, ratio, 0.0), 1.0)
    if not with_giou:
        return iou_mat, None
    h = np.where(has_hull, hull, 1.0)
    giou_mat = np.where(has_hull, np.where(has_union, ratio - (hull - union) / h, -1.0), 1.0)
    return iou_mat, giou_mat
