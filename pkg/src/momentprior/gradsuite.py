"""Finite-difference verification of every analytic loss gradient.

Random points are drawn away from the non-smooth set of each loss: span
endpoints that coincide, zero center/width differences, sign flips in the
position loss, and points where a small nudge would change the Hungarian
assignment or the event association. At such points central differences are
meaningful and the analytic gradient must agree with them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .events import EventSet, event_frame_ranges
from .feasibility import derive_seed
from .losses import (
    PositionEmbeddings,
    RegulationWeights,
    associate_events,
    center_frame,
    check_gradients,
    l_evt,
    l_pos,
    span_kink_distance,
    total_loss,
)
from .matching import LossReport, MatchWeights, cost_matrix, hungarian, moment_set_loss, pair_cost_with_grad

SUITE = ("moment_set_loss", "l_evt[best_iou]", "l_evt[all_events]", "l_pos", "total_loss")


@dataclass(frozen=True)
class SuiteRow:
    name: str
    n_points: int
    n_rejected: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _spans(rng, n, horizon=1.0):
    centers = rng.uniform(0.1, 0.9, n) * horizon
    widths = rng.uniform(0.05, 0.5, n) * horizon
    return np.stack([centers, widths], axis=1)


def _events(rng, horizon=1.0):
    n = int(rng.integers(2, 6))
    cuts = np.sort(rng.uniform(0.05, 0.95, n - 1)) * horizon
    if np.any(np.diff(np.concatenate([[0.0], cuts, [horizon]])) < 0.02 * horizon):
        return None
    return EventSet.from_boundaries(cuts, horizon)


def pos_kink_distance(P: np.ndarray, ranges) -> np.ndarray:
    """Per-entry distance to the nearest sign change of ``P_e - p_e``."""
    out = np.full(P.shape, np.inf)
    for first, last in ranges:
        c = center_frame(first, last)
        rows = [r for r in range(first, last + 1) if r != c]
        if not rows:
            continue
        gap = np.abs(P[rows] - P[c])
        out[rows] = np.minimum(out[rows], gap)
        out[c] = np.minimum(out[c], gap.min(axis=0))
    return out


def _stable(fn: Callable[[np.ndarray], object], x: np.ndarray, delta: float) -> bool:
    """True if ``fn`` gives the same discrete answer after nudging any coordinate by ``delta``."""
    base = fn(x)
    for i in range(x.size):
        for sign in (-1.0, 1.0):
            y = x.copy()
            y.flat[i] += sign * delta
            if fn(y) != base:
                return False
    return True


def _assignment_stable(preds: np.ndarray, gts: np.ndarray, mw: MatchWeights, delta: float) -> bool:
    """``_stable`` for the Hungarian matching, with every nudged cost matrix built in one call."""
    base = hungarian(cost_matrix(preds, gts, mw)).pairs
    n, m = len(preds), len(gts)
    nudged = np.repeat(preds[None], 2 * preds.size, axis=0)
    for i in range(preds.size):
        nudged[2 * i].flat[i] -= delta
        nudged[2 * i + 1].flat[i] += delta
    p = np.repeat(nudged.reshape(-1, 2), m, axis=0)
    t = np.tile(gts, (len(nudged) * n, 1))
    costs, _ = pair_cost_with_grad(p, t, mw.lambda_l1, mw.lambda_iou)
    return all(hungarian(c).pairs == base for c in costs.reshape(-1, n, m))


def _far_from_kinks(dist: np.ndarray, margin: float) -> bool:
    return bool(np.all(dist > margin))


def _case_mnt(rng, w, eps, margin):
    n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    preds, gts = _spans(rng, n), _spans(rng, m)
    mw = MatchWeights(w.lambda_l1, w.lambda_iou)
    if not _assignment_stable(preds, gts, mw, 10 * eps):
        return None
    a = hungarian(cost_matrix(preds, gts, mw))
    matched = np.array(a.pred_indices)
    dist = span_kink_distance(preds[matched], gts[np.array(a.gt_indices)])
    if not _far_from_kinks(dist, margin):
        return None

    def ev(x):
        r = moment_set_loss(x.reshape(-1, 2), gts, mw, a)
        return r.value, r.grads["spans"]

    return ev, preds


def _case_evt(rng, w, eps, margin, mode):
    events = _events(rng)
    if events is None:
        return None
    ev_arr = events.as_array()
    preds = _spans(rng, int(rng.integers(1, 5)))
    if mode == "best_iou":
        assoc = lambda x: tuple(associate_events(x.reshape(-1, 2), ev_arr))
        if not _stable(assoc, preds, 10 * eps):
            return None
        association = associate_events(preds, ev_arr)
        dist = span_kink_distance(preds, ev_arr[association])
    else:
        association = None
        dist = np.min(
            [span_kink_distance(preds, np.repeat(e[None], len(preds), axis=0)) for e in ev_arr], axis=0
        )
    if not _far_from_kinks(dist, margin):
        return None

    def ev(x):
        # the association is locally constant here (checked above)
        r = l_evt(x.reshape(-1, 2), events, w, mode, association)
        return r.value, r.grads["spans"]

    return ev, preds


def _case_pos(rng, eps, margin, max_T=24, max_d=4):
    T, d = int(rng.integers(6, max_T + 1)), int(rng.integers(1, max_d + 1))
    cuts = np.sort(rng.choice(np.arange(2, T - 1), size=int(rng.integers(0, 3)), replace=False))
    if np.any(np.diff(np.concatenate([[0], cuts, [T]])) < 2):
        return None
    events = EventSet.from_boundaries(cuts.astype(float), float(T))
    P = 0.5 * rng.standard_normal((T, d))
    ranges = event_frame_ranges(events, 1.0, T)
    if not _far_from_kinks(pos_kink_distance(P, ranges), margin):
        return None

    def ev(x):
        r = l_pos(PositionEmbeddings(x.reshape(T, d)), events, ranges)
        return r.value, r.grads["positions"]

    return ev, P


def _case_total(rng, w, eps, margin):
    """Spans and positions as one flat vector through ``total_loss``."""
    mnt_case = _case_mnt(rng, w, eps, margin)
    if mnt_case is None:
        return None
    _, preds = mnt_case
    events = _events(rng)
    if events is None:
        return None
    ev_arr = events.as_array()
    assoc = lambda x: tuple(associate_events(x.reshape(-1, 2), ev_arr))
    if not _stable(assoc, preds, 10 * eps):
        return None
    association = associate_events(preds, ev_arr)
    if not _far_from_kinks(span_kink_distance(preds, ev_arr[association]), margin):
        return None
    # a small table keeps the joint check cheap; l_pos alone covers larger ones
    pos_case = _case_pos(rng, eps, margin, max_T=10, max_d=2)
    if pos_case is None:
        return None
    pos_ev, P = pos_case
    n_span = preds.size
    mnt_ev = mnt_case[0]

    # a nudge moves either a span or a position entry, so the untouched part
    # is looked up by its exact bytes instead of being recomputed
    span_parts, pos_parts = {}, {}

    def span_part(spans):
        key = spans.tobytes()
        if key not in span_parts:
            span_parts[key] = (mnt_ev(spans.ravel()), l_evt(spans, events, w, association=association))
        return span_parts[key]

    def pos_part(flat):
        key = flat.tobytes()
        if key not in pos_parts:
            pos_parts[key] = pos_ev(flat)
        return pos_parts[key]

    def ev(x):
        (v_m, g_m), e = span_part(x[:n_span].reshape(-1, 2))
        v_p, g_p = pos_part(x[n_span:])
        report = total_loss(LossReport(v_m, {"spans": g_m}), e, LossReport(v_p, {"positions": g_p}), w)
        return report.value, np.concatenate([report.grads["spans"].ravel(), report.grads["positions"].ravel()])

    return ev, np.concatenate([preds.ravel(), P.ravel()])


def run_suite(
    seed: int = 0,
    n_points: int = 1000,
    eps: float = 1e-6,
    tolerance: float = 1e-4,
    margin: float = 1e-4,
    names: tuple[str, ...] = SUITE,
    max_tries: int = 100,
) -> list[SuiteRow]:
    """Check every loss in ``names`` at ``n_points`` random smooth points.

    ``margin`` is the minimum distance from every kink; points closer to one
    are redrawn and counted as rejected. Point ``k`` of loss ``name`` is drawn
    from its own seed, so rows do not depend on which other losses run.
    """
    w = RegulationWeights()
    builders = {
        "moment_set_loss": lambda rng: _case_mnt(rng, w, eps, margin),
        "l_evt[best_iou]": lambda rng: _case_evt(rng, w, eps, margin, "best_iou"),
        "l_evt[all_events]": lambda rng: _case_evt(rng, w, eps, margin, "all_events"),
        "l_pos": lambda rng: _case_pos(rng, eps, margin),
        "total_loss": lambda rng: _case_total(rng, w, eps, margin),
    }
    rows = []
    for name in names:
        if name not in builders:
            raise ValueError(f"unknown suite entry {name!r}; choose from {', '.join(SUITE)}")
        worst, rejected = 0.0, 0
        for k in range(n_points):
            rng = np.random.default_rng(derive_seed(seed, "gradsuite", name, k))
            for _ in range(max_tries):
                case = builders[name](rng)
                if case is not None:
                    break
                rejected += 1
            else:
                raise RuntimeError(f"{name}: no smooth point found in {max_tries} draws")
            evaluator, point = case
            flat = np.asarray(point, dtype=np.float64).ravel()
            result = check_gradients(evaluator, flat, eps=eps)
            worst = max(worst, result.max_rel_error)
        rows.append(SuiteRow(name, n_points, rejected, worst, tolerance))
    return rows
