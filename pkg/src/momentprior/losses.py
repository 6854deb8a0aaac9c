"""Pseudo-event regulation losses, the combined objective, and a gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .events import EventSet, event_frame_ranges
from .matching import LossReport, _as_array, pair_cost_with_grad
from .temporal import pairwise_iou

EXP_CLAMP = 50.0
IOU_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PositionEmbeddings:
    embeddings: np.ndarray = field(repr=False)
    frame_period: float = 1.0

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError(f"position embeddings must be T x d, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValueError("position embeddings contain non-finite values")
        object.__setattr__(self, "embeddings", emb)


@dataclass(frozen=True)
class RegulationWeights:
    lambda_l1: float = 1.0
    lambda_iou: float = 1.0
    lambda_e: float = 0.1
    lambda_p: float = 0.001

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_iou", "lambda_e", "lambda_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def associate_events(preds: np.ndarray, events: np.ndarray) -> np.ndarray:
    """Index of the event each prediction is regulated towards.

    Highest IoU wins, the earlier event on ties; a prediction overlapping no
    event goes to the event with the nearest center. IoUs within
    ``IOU_TIE_TOL`` count as tied: a span containing several equal-length
    events would otherwise be assigned by endpoint roundoff.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    events = np.asarray(events, dtype=np.float64).reshape(-1, 2)
    ious = pairwise_iou(preds, events)
    top = ious.max(axis=1)
    best = np.argmax(ious >= (top - IOU_TIE_TOL)[:, None], axis=1)
    dist = np.abs(preds[:, 0][:, None] - events[:, 0][None, :])
    nearest = np.argmin(dist, axis=1)
    return np.where(top > 0, best, nearest)


def l_evt(
    preds,
    events: EventSet | np.ndarray,
    w: RegulationWeights = RegulationWeights(),
    mode: str = "best_iou",
    association: np.ndarray | None = None,
) -> LossReport:
    """Event regulation: pull predicted spans towards pseudo-events.

    ``best_iou`` pairs each prediction with one event (see
    ``associate_events``); ``all_events`` sums every event against every
    prediction. The value is a sum, not a mean.
    """
    preds = _as_array(preds)
    ev = events.as_array() if isinstance(events, EventSet) else np.asarray(events, dtype=np.float64).reshape(-1, 2)
    if len(ev) == 0:
        raise ValueError("l_evt needs at least one event")
    n = len(preds)
    if mode == "best_iou":
        if association is None:
            association = associate_events(preds, ev)
        cost, grad = pair_cost_with_grad(preds, ev[association], w.lambda_l1, w.lambda_iou)
        terms = cost
    elif mode == "all_events":
        m = len(ev)
        p = np.repeat(preds, m, axis=0)
        t = np.tile(ev, (n, 1))
        cost, g = pair_cost_with_grad(p, t, w.lambda_l1, w.lambda_iou)
        terms = cost.reshape(n, m)
        grad = g.reshape(n, m, 2).sum(axis=1)
    else:
        raise ValueError(f"unknown l_evt mode {mode!r}")
    value = math.fsum(np.ravel(terms))
    return LossReport(value, {"spans": grad}, {"terms": terms, "association": association, "mode": mode})


def center_frame(first: int, last: int) -> int:
    return (first + last) // 2


def l_pos(pos: PositionEmbeddings, events: EventSet, frame_ranges: list[tuple[int, int]] | None = None) -> LossReport:
    """Position regulation: ``sum_e exp(mean |P_e - p_e|)``.

    ``P_e`` holds the member rows of event ``e`` and ``p_e`` its center row;
    the mean runs over all ``members * d`` entries. The exponent is clamped
    at ``EXP_CLAMP`` (zero gradient beyond it).
    """
    P = pos.embeddings
    T, d = P.shape
    if frame_ranges is None:
        frame_ranges = event_frame_ranges(events, pos.frame_period, T)
    grad = np.zeros_like(P)
    terms = []
    saturated = False
    for first, last in frame_ranges:
        if last < first:
            raise ValueError("event shorter than one frame")
        members = P[first : last + 1]
        c = center_frame(first, last)
        dev = members - P[c]
        n_entries = members.size
        expo = np.abs(dev).sum() / n_entries
        if expo > EXP_CLAMP:
            saturated = True
            terms.append(math.exp(EXP_CLAMP))
            continue
        term = math.exp(expo)
        terms.append(term)
        g = term * np.sign(dev) / n_entries
        grad[first : last + 1] += g
        grad[c] -= g.sum(axis=0)
    value = math.fsum(terms)
    return LossReport(value, {"positions": grad}, {"terms": np.array(terms), "saturated": saturated})


def total_loss(mnt: LossReport, evt: LossReport | None, pos: LossReport | None, w: RegulationWeights = RegulationWeights()) -> LossReport:
    """``mnt + lambda_e * evt + lambda_p * pos`` with gradients combined per input."""
    parts = [(1.0, mnt), (w.lambda_e, evt), (w.lambda_p, pos)]
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for weight, report in parts:
        if report is None:
            continue
        value += weight * report.value
        for key, g in report.grads.items():
            if key in grads:
                if grads[key].shape != g.shape:
                    raise ValueError(f"gradient {key!r}: shape {g.shape} does not match {grads[key].shape}")
                grads[key] = grads[key] + weight * g
            else:
                grads[key] = weight * g
    return LossReport(value, grads, {"components": [None if r is None else r.value for _, r in parts]})


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int | None
    n_checked: int
    n_skipped: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def check_gradients(
    loss_evaluator: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point,
    eps: float = 1e-6,
    kink_distance: Callable[[np.ndarray], np.ndarray] | None = None,
    rel_floor: float = 1e-3,
    abs_floor: float = 1e-8,
) -> GradCheckResult:
    """Compare an analytic gradient against central differences.

    ``loss_evaluator(x)`` returns ``(value, gradient)`` for a flat ``x``.
    Coordinates whose ``kink_distance`` is below ``10 * eps`` are skipped.
    The relative error of a coordinate is ``|a - n| / max(|n|, s)`` where
    ``s = max(rel_floor * max_j |n_j|, abs_floor)``; the floor keeps exactly
    zero partials from being judged on finite-difference roundoff.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point, dtype=np.float64).ravel()
    _, analytic = loss_evaluator(x0.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    skip = np.zeros(x0.size, dtype=bool)
    if kink_distance is not None:
        skip = np.asarray(kink_distance(x0.copy())).ravel() < 10 * eps
    numeric = np.full(x0.size, np.nan)
    for i in np.flatnonzero(~skip):
        x = x0.copy()
        x[i] = x0[i] + eps
        f_plus, _ = loss_evaluator(x)
        x[i] = x0[i] - eps
        f_minus, _ = loss_evaluator(x)
        numeric[i] = (f_plus - f_minus) / (2 * eps)
    worst, worst_i = 0.0, None
    checked = ~skip
    if checked.any():
        scale = max(rel_floor * float(np.max(np.abs(numeric[checked]))), abs_floor)
        errs = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), scale)
        errs[skip] = -np.inf
        worst_i = int(np.argmax(errs))
        worst = float(errs[worst_i])
    return GradCheckResult(worst, worst_i, int((~skip).sum()), int(skip.sum()), analytic, numeric)


def span_kink_distance(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Distance of each prediction coordinate to the nearest non-smooth point.

    Kinks of the L1 + GIoU cost sit where an endpoint of the prediction meets
    an endpoint of the target, or where a center or width difference is zero.
    Returned with the shape of ``preds``; a width step ``d`` moves endpoints by
    ``d / 2``, hence the factor 2 for the width column.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    s1 = preds[:, 0] - preds[:, 1] / 2
    e1 = preds[:, 0] + preds[:, 1] / 2
    s2 = targets[:, 0] - targets[:, 1] / 2
    e2 = targets[:, 0] + targets[:, 1] / 2
    gaps = np.stack([s1 - s2, s1 - e2, e1 - s2, e1 - e2], axis=1)
    end_gap = np.abs(gaps).min(axis=1)
    out = np.empty_like(preds)
    out[:, 0] = np.minimum(end_gap, np.abs(preds[:, 0] - targets[:, 0]))
    out[:, 1] = np.minimum(2 * end_gap, np.abs(preds[:, 1] - targets[:, 1]))
    # widths near zero make GIoU degenerate
    out[:, 1] = np.minimum(out[:, 1], preds[:, 1])
    return out
