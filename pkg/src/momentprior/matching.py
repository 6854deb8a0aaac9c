"""Hungarian assignment and the set-matching moment loss.

Predictions and targets are ``[center, width]`` rows. The pairwise cost is
``lambda_l1 * (|dc| + |dw|) + lambda_iou * (1 - giou)`` and the loss is the
mean cost over Hungarian-matched pairs, with gradients taken for a fixed
assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .temporal import Span, spans_to_array


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    @property
    def pred_indices(self) -> list[int]:
        return [i for i, _ in self.pairs]

    @property
    def gt_indices(self) -> list[int]:
        return [j for _, j in self.pairs]


@dataclass(frozen=True)
class MatchWeights:
    lambda_l1: float = 1.0
    lambda_iou: float = 1.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_iou < 0:
            raise ValueError("match weights must be non-negative")
        if self.lambda_l1 == 0 and self.lambda_iou == 0:
            raise ValueError("match weights cannot both be zero")


@dataclass
class LossReport:
    """A scalar loss plus gradients keyed by input name.

    ``grads`` maps an input name (``"spans"``, ``"positions"``) to an array
    with the shape of that input.
    """

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


# -- assignment ---------------------------------------------------------------


def _lsa_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return math.fsum(cost[r, c])


def hungarian(cost, tol: float = 1e-9) -> Assignment:
    """Minimum-cost one-to-one assignment of size ``min(n, m)``.

    Among optimal assignments the lexicographically smallest list of
    ``(pred, gt)`` pairs is returned: rows are fixed in order, each to the
    smallest column that still admits an optimal completion. Costs within
    ``tol * (1 + |optimum|)`` of the optimum count as optimal.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment((), 0.0)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")

    if m == 1:
        i = int(np.argmin(cost[:, 0]))
        return Assignment(((i, 0),), float(cost[i, 0]))
    if n == 1:
        j = int(np.argmin(cost[0]))
        return Assignment(((0, j),), float(cost[0, j]))

    optimum = _lsa_cost(cost)
    slack = tol * (1.0 + abs(optimum))
    k = min(n, m)
    pairs: list[tuple[int, int]] = []
    fixed = 0.0
    free_cols = list(range(m))
    for i in range(n):
        need = k - len(pairs)
        if need == 0:
            break
        rest_rows = np.arange(i + 1, n)
        for j in free_cols:
            cols = [c for c in free_cols if c != j]
            if min(len(rest_rows), len(cols)) < need - 1:
                continue
            sub = cost[np.ix_(rest_rows, cols)]
            total = fixed + cost[i, j] + (_lsa_cost(sub) if need > 1 else 0.0)
            if total <= optimum + slack:
                pairs.append((i, j))
                fixed += cost[i, j]
                free_cols.remove(j)
                break
        # row i stays unmatched if no column completes an optimum
    return Assignment(tuple(pairs), math.fsum(cost[i, j] for i, j in pairs))


# -- span cost terms with gradients ------------------------------------------


def giou_with_grad(pred: np.ndarray, target: np.ndarray):
    """GIoU between ``(n, 2)`` predictions and targets, row by row.

    Returns ``(giou, d giou / d pred)`` where the gradient is taken w.r.t.
    the prediction's ``[center, width]``. Degenerate cases (zero union or
    zero hull) have zero gradient.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    s1 = pred[:, 0] - pred[:, 1] / 2
    e1 = pred[:, 0] + pred[:, 1] / 2
    s2 = target[:, 0] - target[:, 1] / 2
    e2 = target[:, 0] + target[:, 1] / 2

    overlap = np.minimum(e1, e2) - np.maximum(s1, s2)
    has_inter = overlap > 0
    inter = np.where(has_inter, overlap, 0.0)
    union = pred[:, 1] + target[:, 1] - inter
    hull = np.maximum(e1, e2) - np.minimum(s1, s2)

    ok = (union > 0) & (hull > 0)
    u = np.where(ok, union, 1.0)
    h = np.where(ok, hull, 1.0)
    g = np.where(ok, inter / u - (h - u) / h, np.where(hull > 0, -1.0, 1.0))
    # roundoff can push identical spans a few ulps past 1
    g = np.minimum(g, 1.0)

    # partials w.r.t. the prediction's start and end
    di_de = np.where(has_inter & (e1 < e2), 1.0, 0.0)
    di_ds = np.where(has_inter & (s1 > s2), -1.0, 0.0)
    du_de = 1.0 - di_de
    du_ds = -1.0 - di_ds
    dh_de = np.where(e1 > e2, 1.0, 0.0)
    dh_ds = np.where(s1 < s2, -1.0, 0.0)

    def dg(di, du, dh):
        return (di * u - inter * du) / u**2 + (du * h - u * dh) / h**2

    dg_de = np.where(ok, dg(di_de, du_de, dh_de), 0.0)
    dg_ds = np.where(ok, dg(di_ds, du_ds, dh_ds), 0.0)
    grad = np.stack([dg_ds + dg_de, 0.5 * (dg_de - dg_ds)], axis=1)
    return g, grad


def pair_cost_with_grad(pred: np.ndarray, target: np.ndarray, lambda_l1: float, lambda_iou: float):
    """Row-wise ``lambda_l1 * |pred - target|_1 + lambda_iou * (1 - giou)``."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    diff = pred - target
    g, dg = giou_with_grad(pred, target)
    cost = lambda_l1 * np.abs(diff).sum(axis=1) + lambda_iou * (1.0 - g)
    grad = lambda_l1 * np.sign(diff) - lambda_iou * dg
    return cost, grad


def cost_matrix(preds: np.ndarray, gts: np.ndarray, w: MatchWeights) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    n, m = len(preds), len(gts)
    p = np.repeat(preds, m, axis=0)
    t = np.tile(gts, (n, 1))
    cost, _ = pair_cost_with_grad(p, t, w.lambda_l1, w.lambda_iou)
    return cost.reshape(n, m)


def _as_array(spans) -> np.ndarray:
    if isinstance(spans, np.ndarray):
        return np.asarray(spans, dtype=np.float64).reshape(-1, 2)
    spans = list(spans)
    if spans and isinstance(spans[0], Span):
        return spans_to_array(spans)
    return np.asarray(spans, dtype=np.float64).reshape(-1, 2)


def moment_set_loss(preds, gts, w: MatchWeights = MatchWeights(), assignment: Assignment | None = None) -> LossReport:
    """Mean matched cost between predicted and ground-truth spans.

    Unmatched prediction slots contribute nothing. Pass ``assignment`` to
    evaluate the loss for a fixed matching (as gradient checks do).
    """
    preds = _as_array(preds)
    gts = _as_array(gts)
    if len(gts) == 0:
        raise ValueError("moment_set_loss needs at least one ground-truth span")
    if assignment is None:
        assignment = hungarian(cost_matrix(preds, gts, w))
    grad = np.zeros_like(preds)
    if not assignment.pairs:
        return LossReport(0.0, {"spans": grad}, {"assignment": assignment})
    pi = np.array(assignment.pred_indices)
    gi = np.array(assignment.gt_indices)
    cost, dcost = pair_cost_with_grad(preds[pi], gts[gi], w.lambda_l1, w.lambda_iou)
    n_pairs = len(pi)
    grad[pi] = dcost / n_pairs
    value = math.fsum(cost) / n_pairs
    return LossReport(value, {"spans": grad}, {"assignment": assignment, "pair_costs": cost})
