"""Detect pseudo-events in a synthetic three-block video and draw its TSM.

Run: python3 demos/event_detection.py [out.svg]
"""

import sys

import numpy as np

from momentprior import svg
from momentprior.events import FrameFeatures, detect_events_with_scores, tsm


def three_blocks(seed=0, T=60, dim=16, sigma=0.05):
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(12, T - 11), size=2, replace=False))
    while cuts[1] - cuts[0] < 10:
        cuts = np.sort(rng.choice(np.arange(12, T - 11), size=2, replace=False))
    protos = rng.standard_normal((3, dim))
    labels = np.searchsorted(cuts, np.arange(T), side="right")
    return protos[labels] + sigma * rng.standard_normal((T, dim)), cuts


def main(out="event_detection.svg"):
    x, cuts = three_blocks()
    video = FrameFeatures("demo", x, frame_period=1.0)
    events, scores = detect_events_with_scores(video)
    print(f"true cuts (frames): {cuts.tolist()}")
    print(f"detected boundaries: {events.boundaries}")
    print(f"split scores: {[round(float(s), 3) for s in scores]}")
    for e in events:
        print(f"  event [{e.start:5.1f}, {e.end:5.1f})")
    with open(out, "w") as fh:
        fh.write(svg.heatmap(tsm(video), [int(b) for b in events.boundaries], title="temporal similarity matrix"))
    print(f"wrote {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
