"""Shared synthetic fixtures for the test suite."""

import numpy as np

from momentprior.metrics import HighlightAnnotation, MomentPrediction


def block_features(lengths, dim=16, sigma=0.0, rng=None, orthogonal=True):
    """Piecewise-constant frame features, one prototype per block, plus noise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    k = len(lengths)
    if orthogonal:
        protos = np.eye(dim)[:k]
    else:
        protos = rng.standard_normal((k, dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    x = np.repeat(protos, lengths, axis=0)
    if sigma:
        x = x + sigma * rng.standard_normal(x.shape)
    return x


def three_block_video(seed, T=60, sigma=0.05, dim=16, min_len=10):
    """Random 3-block split of ``T`` frames; returns features and the two true cuts."""
    rng = np.random.default_rng(seed)
    spare = T - 3 * min_len
    extra = rng.multinomial(spare, [1 / 3] * 3)
    lengths = min_len + extra
    x = block_features(lengths, dim, sigma, rng, orthogonal=False)
    return x, list(np.cumsum(lengths)[:-1])


def random_mr_fixture(rng):
    n_videos = int(rng.integers(1, 6))
    videos, preds, gts = [], [], {}
    for v in range(n_videos):
        vid = f"v{v}"
        g = [sorted(map(float, rng.integers(0, 21, 2))) for _ in range(int(rng.integers(1, 4)))]
        g = [[a, b + 1.0] if a == b else [a, b] for a, b in g]
        n = int(rng.integers(0, 9))
        s = [sorted(map(float, rng.integers(0, 21, 2))) for _ in range(n)]
        sc = [float(x) for x in rng.integers(0, 4, n)]
        videos.append((s, sc, g))
        preds.append(MomentPrediction(vid, np.array(s).reshape(-1, 2), sc))
        gts[vid] = g
    return videos, preds, gts


def random_hd_fixture(rng):
    videos, anns = [], []
    for v in range(int(rng.integers(1, 6))):
        n = int(rng.integers(1, 9))
        labels = [int(x) for x in rng.integers(0, 5, n)]
        scores = [float(x) for x in rng.integers(0, 5, n)]
        videos.append((labels, scores))
        anns.append(HighlightAnnotation(f"v{v}", labels, scores))
    if not any(4 in labels for labels, _ in videos):
        videos[0][0][0] = 4
        anns[0] = HighlightAnnotation("v0", videos[0][0], videos[0][1])
    return videos, anns
