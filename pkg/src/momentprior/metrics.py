"""Moment-retrieval and highlight-detection metrics.

Moment retrieval: Recall@1 at IoU thresholds and mAP over
``[0.5:0.05:0.95]``. Highlight detection: mAP over clips rated 4
("very good") and HIT@1.

Per-video AP values and all means are accumulated as exact fractions and
rounded to float once, so results do not depend on summation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

MR_THRESHOLDS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
R1_THRESHOLDS = (0.5, 0.7)
VERY_GOOD = 4


@dataclass(frozen=True)
class MomentPrediction:
    """Ranked candidate spans (``[start, end]``) for one video."""

    video_id: str
    spans: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        spans = np.asarray(self.spans, dtype=np.float64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(spans) != len(scores):
            raise ValueError(f"video {self.video_id!r}: {len(spans)} spans but {len(scores)} scores")
        if not (np.all(np.isfinite(spans)) and np.all(np.isfinite(scores))):
            raise ValueError(f"video {self.video_id!r}: non-finite spans or scores")
        if np.any(spans[:, 1] < spans[:, 0]):
            raise ValueError(f"video {self.video_id!r}: span with end before start")
        object.__setattr__(self, "spans", spans)
        object.__setattr__(self, "scores", scores)

    def ranked(self) -> np.ndarray:
        """Spans by descending score, ties kept in input order."""
        order = np.argsort(-self.scores, kind="stable")
        return self.spans[order]


@dataclass(frozen=True)
class HighlightAnnotation:
    video_id: str
    labels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels).reshape(-1)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(labels) != len(scores):
            raise ValueError(f"video {self.video_id!r}: {len(labels)} labels but {len(scores)} scores")
        if len(labels) == 0:
            raise ValueError(f"video {self.video_id!r}: no clips")
        if not np.all(np.isfinite(scores)):
            raise ValueError(f"video {self.video_id!r}: non-finite saliency scores")
        if np.any(labels != np.round(labels)) or labels.min() < 0 or labels.max() > VERY_GOOD:
            raise ValueError(f"video {self.video_id!r}: labels must be integers in 0..4")
        object.__setattr__(self, "labels", labels.astype(int))
        object.__setattr__(self, "scores", scores)


@dataclass
class MetricsReport:
    r1_at: dict[float, float] = field(default_factory=dict)
    map_at: dict[float, float] = field(default_factory=dict)
    map_avg: float | None = None
    hd_map: float | None = None
    hit_at_1: float | None = None
    per_video: dict[str, dict] = field(default_factory=dict)
    n_excluded: int = 0

    def as_dict(self) -> dict:
        d = {}
        if self.r1_at:
            d["r1"] = {f"{t:g}": v for t, v in self.r1_at.items()}
        if self.map_at:
            d["map"] = {f"{t:g}": v for t, v in self.map_at.items()}
            d["map_avg"] = self.map_avg
        if self.hd_map is not None:
            d["hd_map"] = self.hd_map
            d["hit_at_1"] = self.hit_at_1
            d["n_excluded"] = self.n_excluded
        d["per_video"] = self.per_video
        return d

    def csv_row(self) -> tuple[list[str], list[str]]:
        header, row = [], []
        for t, v in self.r1_at.items():
            header.append(f"R1@{t:g}")
            row.append(repr(v))
        for t, v in self.map_at.items():
            header.append(f"mAP@{t:g}")
            row.append(repr(v))
        if self.map_at:
            header.append("mAP_avg")
            row.append(repr(self.map_avg))
        if self.hd_map is not None:
            header += ["HD_mAP", "HIT@1"]
            row += [repr(self.hd_map), repr(self.hit_at_1)]
        return header, row


def _interval_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of one ``[start, end]`` interval against rows of ``b``."""
    inter = np.maximum(0.0, np.minimum(a[1], b[:, 1]) - np.maximum(a[0], b[:, 0]))
    union = (a[1] - a[0]) + (b[:, 1] - b[:, 0]) - inter
    same = (a[0] == b[:, 0]) & (a[1] == b[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, np.where(same, 1.0, 0.0))


def _by_video(preds) -> dict[str, MomentPrediction]:
    if isinstance(preds, Mapping):
        return dict(preds)
    out = {}
    for p in preds:
        if p.video_id in out:
            raise ValueError(f"duplicate predictions for video {p.video_id!r}")
        out[p.video_id] = p
    return out


def _gt_arrays(gts) -> dict[str, np.ndarray]:
    out = {}
    for vid, spans in dict(gts).items():
        arr = np.asarray(spans, dtype=np.float64).reshape(-1, 2)
        if len(arr) == 0:
            raise ValueError(f"video {vid!r} has no ground-truth spans")
        out[vid] = arr
    return out


def _check_coverage(preds: dict, gts: dict) -> None:
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise ValueError(f"predictions for videos without ground truth: {missing[:5]}")


def recall_at_1(preds, gts, thresholds: Sequence[float] = R1_THRESHOLDS) -> dict[float, float]:
    """Fraction of videos whose top-1 span reaches the IoU threshold with any gt span.

    ``gts`` maps video id to ``[start, end]`` spans; videos without
    predictions count as misses.
    """
    preds = _by_video(preds)
    gts = _gt_arrays(gts)
    _check_coverage(preds, gts)
    hits = {t: 0 for t in thresholds}
    for vid, gt in gts.items():
        p = preds.get(vid)
        if p is None or len(p.spans) == 0:
            continue
        best = float(_interval_iou(p.ranked()[0], gt).max())
        for t in thresholds:
            if best >= t:
                hits[t] += 1
    n = len(gts)
    return {t: float(Fraction(hits[t], n)) for t in thresholds}


def _match_tp(ranked: np.ndarray, gt: np.ndarray, threshold: float) -> list[bool]:
    matched = np.zeros(len(gt), dtype=bool)
    tp = []
    for span in ranked:
        ious = _interval_iou(span, gt)
        ious[matched] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= threshold:
            matched[j] = True
            tp.append(True)
        else:
            tp.append(False)
    return tp


def _ap_from_tp(tp: Sequence[bool], n_gt: int) -> Fraction:
    """All-point interpolated AP, exactly.

    Every true positive raises recall by ``1 / n_gt``, so the area under the
    precision envelope is the mean over true positives of the best precision
    at that rank or later.
    """
    n = len(tp)
    if n == 0 or n_gt == 0:
        return Fraction(0)
    precision = []
    hits = 0
    for k, t in enumerate(tp, start=1):
        hits += t
        precision.append(Fraction(hits, k))
    envelope = precision[:]
    for k in range(n - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    return sum((envelope[k] for k in range(n) if tp[k]), Fraction(0)) / n_gt


def average_precision(pred: MomentPrediction | None, gt: np.ndarray, threshold: float) -> Fraction:
    if pred is None or len(pred.spans) == 0:
        return Fraction(0)
    return _ap_from_tp(_match_tp(pred.ranked(), gt, threshold), len(gt))


def mean_average_precision(preds, gts, thresholds: Sequence[float] = MR_THRESHOLDS) -> dict:
    """Per-threshold mAP (mean AP over videos) and their average.

    Returns ``{"map_at": {threshold: mAP}, "map_avg": float, "per_video": ...}``.
    """
    preds = _by_video(preds)
    gts = _gt_arrays(gts)
    _check_coverage(preds, gts)
    n = len(gts)
    per_t: dict[float, Fraction] = {}
    per_video: dict[str, dict] = {vid: {} for vid in gts}
    for t in thresholds:
        total = Fraction(0)
        for vid, gt in gts.items():
            ap = average_precision(preds.get(vid), gt, t)
            per_video[vid][f"{t:g}"] = float(ap)
            total += ap
        per_t[t] = total / n
    avg = sum(per_t.values(), Fraction(0)) / len(thresholds) if thresholds else Fraction(0)
    return {
        "map_at": {t: float(v) for t, v in per_t.items()},
        "map_avg": float(avg),
        "per_video": per_video,
    }


def _ranking_ap(scores: np.ndarray, positive: np.ndarray) -> Fraction:
    """Non-interpolated AP of ranking clips by score (stable ties)."""
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = Fraction(0)
    for k, idx in enumerate(order, start=1):
        if positive[idx]:
            hits += 1
            total += Fraction(hits, k)
    return total / int(positive.sum())


def highlight_metrics(anns: Iterable[HighlightAnnotation]) -> dict:
    """HD mAP and HIT@1 over videos that have at least one "very good" clip."""
    anns = list(anns)
    aps, hits, per_video = [], 0, {}
    excluded = 0
    for ann in anns:
        positive = ann.labels >= VERY_GOOD
        if not positive.any():
            excluded += 1
            continue
        ap = _ranking_ap(ann.scores, positive)
        top = int(np.argmax(ann.scores))
        hit = bool(positive[top])
        aps.append(ap)
        hits += hit
        per_video[ann.video_id] = {"ap": float(ap), "hit": hit}
    if not aps:
        raise ValueError("no video has a clip labelled very good; HD metrics are undefined")
    return {
        "hd_map": float(sum(aps, Fraction(0)) / len(aps)),
        "hit_at_1": float(Fraction(hits, len(aps))),
        "n_excluded": excluded,
        "per_video": per_video,
    }


def evaluate_mr(preds, gts, r1_thresholds=R1_THRESHOLDS, map_thresholds=MR_THRESHOLDS) -> MetricsReport:
    preds = _by_video(preds)
    m = mean_average_precision(preds, gts, map_thresholds)
    return MetricsReport(
        r1_at=recall_at_1(preds, gts, r1_thresholds),
        map_at=m["map_at"],
        map_avg=m["map_avg"],
        per_video=m["per_video"],
    )


def evaluate_hd(anns) -> MetricsReport:
    h = highlight_metrics(anns)
    return MetricsReport(hd_map=h["hd_map"], hit_at_1=h["hit_at_1"], per_video=h["per_video"], n_excluded=h["n_excluded"])


# -- JSONL I/O ---------------------------------------------------------------


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def read_predictions(path) -> list[MomentPrediction]:
    out = []
    for row in _read_jsonl(path):
        spans = row.get("spans", [])
        scores = row.get("scores")
        if scores is None:
            scores = [float(len(spans) - i) for i in range(len(spans))]
        out.append(MomentPrediction(str(row["video_id"]), np.asarray(spans, dtype=np.float64).reshape(-1, 2), scores))
    return out


def read_ground_truth(path) -> dict[str, np.ndarray]:
    out = {}
    for row in _read_jsonl(path):
        vid = str(row["video_id"])
        if vid in out:
            raise ValueError(f"duplicate ground truth for video {vid!r}")
        out[vid] = np.asarray(row["spans"], dtype=np.float64).reshape(-1, 2)
    return out


def read_highlights(path) -> list[HighlightAnnotation]:
    return [HighlightAnnotation(str(r["video_id"]), r["labels"], r["scores"]) for r in _read_jsonl(path)]
