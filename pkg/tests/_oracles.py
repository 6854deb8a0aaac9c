"""Independent brute-force reference implementations used by the tests."""

import itertools
import math
from fractions import Fraction


def interval_iou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union > 0:
        return inter / union
    return 1.0 if (a[0] == b[0] and a[1] == b[1]) else 0.0


def rank(scores):
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def recall_at_1(videos, thresholds):
    """``videos``: list of (pred_spans, pred_scores, gt_spans)."""
    out = {}
    for t in thresholds:
        hits = 0
        for spans, scores, gts in videos:
            if not spans:
                continue
            top = spans[rank(scores)[0]]
            hits += max(interval_iou(top, g) for g in gts) >= t
        out[t] = Fraction(hits, len(videos))
    return out


def greedy_tp(spans, scores, gts, t):
    free = list(range(len(gts)))
    tp = []
    for i in rank(scores):
        best_j, best = None, None
        for j in free:
            v = interval_iou(spans[i], gts[j])
            if best is None or v > best:
                best_j, best = j, v
        if best is not None and best >= t:
            free.remove(best_j)
            tp.append(True)
        else:
            tp.append(False)
    return tp


def stepwise_ap(tp, n_gt):
    """Area under the interpolated PR curve, summed over recall steps."""
    points = []
    hits = 0
    for k, t in enumerate(tp, start=1):
        hits += t
        points.append((Fraction(hits, n_gt), Fraction(hits, k)))
    area, prev_r = Fraction(0), Fraction(0)
    for r in sorted({r for r, _ in points}):
        if r == prev_r:
            continue
        p_interp = max(p for rr, p in points if rr >= r)
        area += (r - prev_r) * p_interp
        prev_r = r
    return area


def mean_ap(videos, thresholds):
    per_t = {}
    for t in thresholds:
        aps = [stepwise_ap(greedy_tp(s, sc, g, t), len(g)) if s else Fraction(0) for s, sc, g in videos]
        per_t[t] = sum(aps, Fraction(0)) / len(videos)
    return per_t, sum(per_t.values(), Fraction(0)) / len(thresholds)


def highlight(videos, very_good=4):
    """``videos``: list of (labels, scores). Returns (hd_map, hit_at_1)."""
    aps, hits = [], 0
    for labels, scores in videos:
        n_pos = sum(1 for x in labels if x >= very_good)
        if n_pos == 0:
            continue
        order = rank(scores)
        precisions = []
        found = 0
        for k, i in enumerate(order, start=1):
            if labels[i] >= very_good:
                found += 1
                precisions.append(Fraction(found, k))
        aps.append(sum(precisions, Fraction(0)) / n_pos)
        hits += labels[order[0]] >= very_good
    return sum(aps, Fraction(0)) / len(aps), Fraction(hits, len(aps))


def brute_force_assignment(cost):
    """All optimal assignments of size min(n, m) as sorted pair tuples, and the optimum."""
    n, m = cost.shape
    best, winners = math.inf, []
    if n <= m:
        candidates = (tuple(zip(range(n), cols)) for cols in itertools.permutations(range(m), n))
    else:
        candidates = (tuple(sorted(zip(rows, range(m)))) for rows in itertools.permutations(range(n), m))
    for pairs in candidates:
        total = math.fsum(cost[i, j] for i, j in pairs)
        if total < best:
            best, winners = total, [pairs]
        elif total == best:
            winners.append(pairs)
    return best, winners
