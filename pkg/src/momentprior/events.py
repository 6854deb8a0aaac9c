"""Pseudo-event detection from a temporal self-similarity matrix (TSM).

A video is split by recursive bisection. Inside a segment every candidate
boundary gets a contrastive score (mean similarity inside the two flanking
diagonal blocks minus the mean similarity of the cross block); the best
admissible boundary is taken if it beats the threshold, and both halves are
processed again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .temporal import Span, from_interval, to_interval


@dataclass(frozen=True)
class FrameFeatures:
    video_id: str
    features: np.ndarray = field(repr=False)
    frame_period: float = 1.0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"features must be a non-empty T x D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"video {self.video_id!r}: non-finite frame features")
        if not self.frame_period > 0:
            raise ValueError("frame_period must be positive")
        object.__setattr__(self, "features", feats)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class EventSet:
    """Contiguous spans covering ``[0, horizon]``."""

    events: tuple[Span, ...]
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        check_partition(self.events, self.horizon)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def boundaries(self) -> list[float]:
        """Interior boundaries (end of each event except the last)."""
        return [to_interval(e)[1] for e in self.events[:-1]]

    def intervals(self) -> list[list[float]]:
        return [list(to_interval(e)) for e in self.events]

    def as_array(self) -> np.ndarray:
        return np.array([[e.center, e.width] for e in self.events], dtype=np.float64).reshape(-1, 2)

    def scaled(self, factor: float) -> "EventSet":
        return EventSet.from_boundaries([b * factor for b in self.boundaries], self.horizon * factor)

    @classmethod
    def from_boundaries(cls, boundaries, horizon: float) -> "EventSet":
        edges = [0.0, *[float(b) for b in boundaries], float(horizon)]
        return cls(tuple(from_interval(a, b) for a, b in zip(edges[:-1], edges[1:])), float(horizon))

    @classmethod
    def from_intervals(cls, intervals, horizon: float | None = None) -> "EventSet":
        intervals = [(float(s), float(e)) for s, e in intervals]
        if horizon is None:
            horizon = intervals[-1][1]
        return cls(tuple(from_interval(s, e) for s, e in intervals), float(horizon))


def check_partition(events, horizon: float, tol: float = 1e-9) -> None:
    if not events:
        raise ValueError("an event set needs at least one event")
    prev_end = 0.0
    for k, e in enumerate(events):
        start, end = to_interval(e)
        if abs(start - prev_end) > tol * max(1.0, abs(horizon)):
            raise ValueError(f"event {k} starts at {start}, expected {prev_end}")
        if end < start:
            raise ValueError(f"event {k} has negative length")
        prev_end = end
    if abs(prev_end - horizon) > tol * max(1.0, abs(horizon)):
        raise ValueError(f"events end at {prev_end}, expected horizon {horizon}")


@dataclass(frozen=True)
class DetectorConfig:
    kernel_half: int = 4
    min_event_len: int = 2
    score_threshold: float = 0.05
    max_depth: int = 8

    def __post_init__(self):
        if self.kernel_half < 1:
            raise ValueError("kernel_half must be >= 1")
        if self.min_event_len < 2:
            raise ValueError("min_event_len must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


def tsm(f: FrameFeatures | np.ndarray) -> np.ndarray:
    """Cosine self-similarity of frames: symmetric with a unit diagonal."""
    x = f.features if isinstance(f, FrameFeatures) else np.asarray(f, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"frame {zero[0]} has a zero-norm feature vector")
    unit = x / norms[:, None]
    s = unit @ unit.T
    s = (s + s.T) / 2
    np.fill_diagonal(s, 1.0)
    return np.clip(s, -1.0, 1.0)


def boundary_scores(sim: np.ndarray, kernel_half: int) -> np.ndarray:
    """Contrastive score for the boundary between frames ``t`` and ``t + 1``.

    The window ``[t - h + 1, t + h]`` is clipped to the matrix; the left and
    right parts are the two diagonal blocks. Returns ``T - 1`` scores.
    """
    sim = np.asarray(sim, dtype=np.float64)
    T = sim.shape[0]
    h = int(kernel_half)
    if T < 2:
        return np.zeros(0)
    # 2-D prefix sums make each block mean O(1)
    csum = np.zeros((T + 1, T + 1))
    csum[1:, 1:] = sim.cumsum(axis=0).cumsum(axis=1)

    def block_mean(r0, r1, c0, c1):
        total = csum[r1, c1] - csum[r0, c1] - csum[r1, c0] + csum[r0, c0]
        return total / ((r1 - r0) * (c1 - c0))

    scores = np.empty(T - 1)
    for t in range(T - 1):
        lo = max(0, t - h + 1)
        hi = min(T, t + h + 1)
        mid = t + 1
        within = 0.5 * (block_mean(lo, mid, lo, mid) + block_mean(mid, hi, mid, hi))
        cross = block_mean(lo, mid, mid, hi)
        scores[t] = within - cross
    return scores


def detect_event_frames(sim: np.ndarray, cfg: DetectorConfig = DetectorConfig()) -> tuple[list[int], list[float]]:
    """Boundary frame indices (first frame of each new event) and their scores."""
    T = sim.shape[0]
    found: list[tuple[int, float]] = []

    def split(a: int, b: int, depth: int) -> None:
        if depth >= cfg.max_depth or b - a < 2 * cfg.min_event_len:
            return
        scores = boundary_scores(sim[a:b, a:b], cfg.kernel_half)
        # boundary after local frame t leaves t + 1 frames on the left
        lo = cfg.min_event_len - 1
        hi = (b - a) - cfg.min_event_len - 1
        if hi < lo:
            return
        window = scores[lo : hi + 1]
        t = lo + int(np.argmax(window))
        best = float(scores[t])
        if not best > cfg.score_threshold:
            return
        cut = a + t + 1
        found.append((cut, best))
        split(a, cut, depth + 1)
        split(cut, b, depth + 1)

    split(0, T, 0)
    found.sort()
    return [c for c, _ in found], [s for _, s in found]


def detect_events(f: FrameFeatures, cfg: DetectorConfig = DetectorConfig()) -> EventSet:
    events, _ = detect_events_with_scores(f, cfg)
    return events


def detect_events_with_scores(f: FrameFeatures, cfg: DetectorConfig = DetectorConfig()):
    cuts, scores = detect_event_frames(tsm(f), cfg)
    horizon = f.n_frames * f.frame_period
    return EventSet.from_boundaries([c * f.frame_period for c in cuts], horizon), scores


def event_frame_ranges(events: EventSet, frame_period: float, n_frames: int | None = None) -> list[tuple[int, int]]:
    """Inclusive ``(first, last)`` frame index of each event."""
    ranges = []
    for e in events:
        start, end = to_interval(e)
        first = int(round(start / frame_period))
        last = int(round(end / frame_period)) - 1
        if last < first:
            raise ValueError(f"event {list(to_interval(e))} covers less than one frame")
        if n_frames is not None and (first < 0 or last >= n_frames):
            raise ValueError(f"event {list(to_interval(e))} falls outside frames [0, {n_frames})")
        ranges.append((first, last))
    return ranges
