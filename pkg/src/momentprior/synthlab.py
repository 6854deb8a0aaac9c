"""Desk-scale moment retrieval experiment with pseudo-event regulation.

Synthetic videos are runs of noisy event prototypes; the query is the
prototype of one event and the ground-truth moment is that event. A small
predictor attends over frames with the query, pools a learned per-frame
position table, and maps the pooled vector to ``K`` ``[center, width]``
slots through per-slot affine heads. Training is full-batch gradient descent
on ``L_mnt + lambda_e * L_evt + lambda_p * L_pos`` where the regulation
terms use pseudo-events detected from the frames, never the true events.

All spans inside this module are in normalized units (fractions of the
video length).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .events import DetectorConfig, EventSet, FrameFeatures, detect_events, event_frame_ranges
from .feasibility import derive_seed
from .losses import EXP_CLAMP, IOU_TIE_TOL, RegulationWeights, center_frame
from .matching import MatchWeights, pair_cost_with_grad
from .temporal import Span, batched_pairwise_iou, from_interval, pairwise_iou


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticVideo:
    features: np.ndarray = field(repr=False)
    events: EventSet
    moments: tuple[Span, ...]
    query: np.ndarray = field(repr=False)
    seed: int
    gt_event: int = 0

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


def _event_lengths(rng, T, n_events, min_len):
    spare = T - n_events * min_len
    extra = rng.multinomial(spare, np.full(n_events, 1.0 / n_events))
    return min_len + extra


def generate_dataset(
    n_videos: int,
    T: int = 60,
    D: int = 16,
    n_events_range: tuple[int, int] = (2, 5),
    noise_sigma: float = 0.1,
    seed: int = 0,
    min_event_len: int = 6,
) -> list[SyntheticVideo]:
    """Event-structured videos; one event per video is the ground-truth moment.

    Frames are ``prototype + noise_sigma * N(0, I)`` with a unit prototype per
    event. Video ``i`` depends only on ``(seed, i)``.
    """
    lo, hi = n_events_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid n_events_range {n_events_range}")
    if T < 2 * hi * min_event_len:
        raise ValueError(f"T={T} is too short for {hi} events of at least {min_event_len} frames (need T >= {2 * hi * min_event_len})")
    if n_videos < 1:
        raise ValueError("n_videos must be positive")
    videos = []
    for i in range(n_videos):
        vseed = derive_seed(seed, "video", i)
        rng = np.random.default_rng(vseed)
        n_events = int(rng.integers(lo, hi + 1))
        lengths = _event_lengths(rng, T, n_events, min_event_len)
        protos = rng.standard_normal((n_events, D))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        labels = np.repeat(np.arange(n_events), lengths)
        feats = protos[labels] + noise_sigma * rng.standard_normal((T, D))
        edges = np.concatenate([[0], np.cumsum(lengths)]).astype(float)
        events = EventSet.from_boundaries(edges[1:-1], float(T))
        k = int(rng.integers(n_events))
        moment = from_interval(edges[k], edges[k + 1])
        videos.append(SyntheticVideo(feats, events, (moment,), protos[k].copy(), vseed, k))
    return videos


# -- model -----------------------------------------------------------------


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def position_features(T: int, d_pos: int) -> np.ndarray:
    """Initial position table: ``u, u**2`` and low-frequency cosines of ``u``."""
    u = (np.arange(T) + 0.5) / T
    cols = [u, u**2]
    k = 1
    while len(cols) < d_pos:
        cols.append(np.cos(np.pi * k * u))
        k += 1
    return np.stack(cols[:d_pos], axis=1)


@dataclass
class ToyModel:
    weights: np.ndarray  # (K, 2, D + d_pos): rows map the pooled input to [center, width-logit]
    bias: np.ndarray  # (K, 2)
    positions: np.ndarray  # (T, d_pos)
    temperature: float = 10.0

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights.copy(), self.bias.copy(), self.positions.copy(), self.temperature)

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias, "positions": self.positions}

    @classmethod
    def init(cls, T: int, D: int, K: int = 3, d_pos: int = 4, seed: int = 0, mode: str = "spread", temperature: float = 10.0):
        rng = np.random.default_rng(derive_seed(seed, "toy-init"))
        weights = 0.01 * rng.standard_normal((K, 2, D + d_pos))
        bias = np.empty((K, 2))
        if mode == "spread":
            bias[:, 0] = (np.arange(K) + 0.5) / K
            bias[:, 1] = math.log(math.expm1(0.25))
        elif mode == "random":
            bias[:, 0] = rng.uniform(0.0, 1.0, K)
            bias[:, 1] = np.log(np.expm1(rng.uniform(0.05, 1.0, K)))
        else:
            raise ValueError(f"unknown init mode {mode!r}")
        return cls(weights, bias, position_features(T, d_pos), temperature)


@dataclass(frozen=True)
class _Batch:
    """Dataset arrays prepared once per training run."""

    attention: np.ndarray  # (V, T)
    pooled_features: np.ndarray  # (V, D): attention-pooled frame features
    gts: np.ndarray  # (V, 2) normalized [center, width]
    events: list[EventSet]  # pseudo-events, normalized
    event_arrays: np.ndarray  # (V, E_max, 2) padded
    event_mask: np.ndarray  # (V, E_max)
    frame_ranges: list[list[tuple[int, int]]]
    pos_index: tuple[np.ndarray, np.ndarray, np.ndarray]  # member rows, owning event, event center rows
    T: int


def attention_weights(video: SyntheticVideo, temperature: float) -> np.ndarray:
    logits = temperature * (video.features @ video.query)
    logits -= logits.max()
    a = np.exp(logits)
    return a / a.sum()


def pseudo_events(video: SyntheticVideo, cfg: DetectorConfig = DetectorConfig()) -> EventSet:
    return detect_events(FrameFeatures("synthetic", video.features, 1.0), cfg)


def _prepare(dataset, temperature, detector: DetectorConfig) -> _Batch:
    T = dataset[0].n_frames
    if any(v.n_frames != T for v in dataset):
        raise ValueError("all videos must have the same number of frames")
    att = np.stack([attention_weights(v, temperature) for v in dataset])
    gts = np.array([[v.moments[0].center / T, v.moments[0].width / T] for v in dataset])
    pseudo = [pseudo_events(v, detector) for v in dataset]
    normed = [e.scaled(1.0 / T) for e in pseudo]
    e_max = max(len(e) for e in normed)
    ev = np.zeros((len(dataset), e_max, 2))
    mask = np.zeros((len(dataset), e_max), dtype=bool)
    for i, e in enumerate(normed):
        ev[i, : len(e)] = e.as_array()
        mask[i, : len(e)] = True
    ranges = [event_frame_ranges(e, 1.0, T) for e in pseudo]
    flat = [r for video_ranges in ranges for r in video_ranges]
    rows = np.concatenate([np.arange(a, b + 1) for a, b in flat])
    owner = np.repeat(np.arange(len(flat)), [b - a + 1 for a, b in flat])
    centers = np.array([center_frame(a, b) for a, b in flat])
    pooled = np.einsum("vt,vtd->vd", att, np.stack([v.features for v in dataset]))
    return _Batch(att, pooled, gts, normed, ev, mask, ranges, (rows, owner, centers), T)


def predict(model: ToyModel, batch: _Batch):
    """Slot predictions ``(V, K, 2)`` plus the intermediates needed for backprop.

    Each frame's input is its feature vector followed by its position
    embedding; the pooled input is the attention-weighted average.
    """
    pooled = np.concatenate([batch.pooled_features, batch.attention @ model.positions], axis=1)
    out = np.einsum("kcd,vd->vkc", model.weights, pooled) + model.bias[None]
    preds = np.empty_like(out)
    preds[..., 0] = out[..., 0]
    preds[..., 1] = _softplus(out[..., 1])
    return preds, pooled, out


def _match_single_gt(preds, gts, mw: MatchWeights):
    """Hungarian for one gt per video: the first slot of minimal cost."""
    V, K, _ = preds.shape
    flat_p = preds.reshape(V * K, 2)
    flat_g = np.repeat(gts, K, axis=0)
    cost, grad = pair_cost_with_grad(flat_p, flat_g, mw.lambda_l1, mw.lambda_iou)
    cost = cost.reshape(V, K)
    slot = np.argmin(cost, axis=1)
    rows = np.arange(V)
    return slot, cost[rows, slot], grad.reshape(V, K, 2)[rows, slot]


def _evt_batched(preds, batch: _Batch, w: RegulationWeights):
    """Batched best-IoU ``l_evt`` per video; returns values ``(V,)`` and grads ``(V, K, 2)``."""
    V, K, _ = preds.shape
    ious = batched_pairwise_iou(preds, batch.event_arrays)  # (V, K, E)
    ious = np.where(batch.event_mask[:, None, :], ious, -np.inf)
    dist = np.abs(preds[:, :, 0][:, :, None] - batch.event_arrays[:, None, :, 0])
    dist = np.where(batch.event_mask[:, None, :], dist, np.inf)
    top = ious.max(axis=2)
    best = np.argmax(ious >= (top - IOU_TIE_TOL)[..., None], axis=2)
    nearest = np.argmin(dist, axis=2)
    assoc = np.where(top > 0, best, nearest)  # (V, K)
    targets = np.take_along_axis(batch.event_arrays, assoc[..., None].repeat(2, axis=2), axis=1)
    cost, grad = pair_cost_with_grad(preds.reshape(-1, 2), targets.reshape(-1, 2), w.lambda_l1, w.lambda_iou)
    return cost.reshape(V, K).sum(axis=1), grad.reshape(V, K, 2)


def _pos_total(positions, batch: _Batch):
    """Sum of ``l_pos`` over all videos, evaluated for every event at once."""
    rows, owner, centers = batch.pos_index
    dev = positions[rows] - positions[centers[owner]]  # (members, d)
    d = positions.shape[1]
    counts = np.bincount(owner, minlength=len(centers)) * d
    expo = np.bincount(owner, weights=np.abs(dev).sum(axis=1), minlength=len(centers)) / counts
    saturated = bool(np.any(expo > EXP_CLAMP))
    terms = np.exp(np.minimum(expo, EXP_CLAMP))
    live = np.where(expo > EXP_CLAMP, 0.0, terms / counts)
    g = live[owner][:, None] * np.sign(dev)
    grad = np.zeros_like(positions)
    np.add.at(grad, rows, g)
    per_event = np.zeros((len(centers), d))
    np.add.at(per_event, owner, g)
    np.add.at(grad, centers, -per_event)
    return math.fsum(terms), grad, saturated


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 300
    K: int = 3
    seed: int = 0
    d_pos: int = 4
    temperature: float = 10.0
    init: str = "spread"
    weights: RegulationWeights = RegulationWeights()
    detector: DetectorConfig = DetectorConfig(score_threshold=0.2)
    max_halvings: int = 10


@dataclass
class ExperimentReport:
    use_evt: bool
    use_pos: bool
    seed: int
    mean_iou: float
    boundary_crossing_rate: float
    loss_curve: list[float] = field(default_factory=list)
    mnt_curve: list[float] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    first_video: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _objective(model: ToyModel, batch: _Batch, use_evt: bool, use_pos: bool, w: RegulationWeights):
    """Mean over videos of the combined loss, and gradients for every parameter."""
    V = batch.attention.shape[0]
    preds, pooled, out = predict(model, batch)
    mw = MatchWeights(w.lambda_l1, w.lambda_iou)
    slot, mnt_vals, mnt_grad = _match_single_gt(preds, batch.gts, mw)
    g_preds = np.zeros_like(preds)
    g_preds[np.arange(V), slot] = mnt_grad
    mnt = math.fsum(mnt_vals) / V
    value = mnt
    if use_evt:
        evt_vals, evt_grad = _evt_batched(preds, batch, w)
        value += w.lambda_e * math.fsum(evt_vals) / V
        g_preds = g_preds + w.lambda_e * evt_grad
    g_preds = g_preds / V

    # back through the heads
    g_out = np.empty_like(out)
    g_out[..., 0] = g_preds[..., 0]
    g_out[..., 1] = g_preds[..., 1] * _sigmoid(out[..., 1])
    g_weights = np.einsum("vkc,vd->kcd", g_out, pooled)
    g_bias = g_out.sum(axis=0)
    g_pooled = np.einsum("vkc,kcd->vd", g_out, model.weights)
    D = batch.pooled_features.shape[1]
    g_positions = batch.attention.T @ g_pooled[:, D:]
    if use_pos:
        pos_val, pos_grad, _ = _pos_total(model.positions, batch)
        value += w.lambda_p * pos_val / V
        g_positions = g_positions + (w.lambda_p / V) * pos_grad
    grads = {"weights": g_weights, "bias": g_bias, "positions": g_positions}
    return value, mnt, grads


def objective_and_grad(model, dataset, use_evt=True, use_pos=True, cfg: TrainConfig = TrainConfig()):
    """Training objective of ``model`` on ``dataset`` (exposed for gradient checks)."""
    batch = _prepare(dataset, model.temperature, cfg.detector)
    value, _, grads = _objective(model, batch, use_evt, use_pos, cfg.weights)
    return value, grads


def _crossing(pred_interval, boundaries, frac: float = 0.1) -> bool:
    s, e = pred_interval
    w = e - s
    if w <= 0:
        return False
    return any((b - s) > frac * w and (e - b) > frac * w for b in boundaries)


def top1_slot(preds: np.ndarray, attention: np.ndarray) -> np.ndarray:
    """Rank slots by soft IoU between the span and the peak-normalized attention.

    The toy model has no confidence head; the query attention profile plays
    that role.
    """
    V, K, _ = preds.shape
    T = attention.shape[1]
    profile = attention / attention.max(axis=1, keepdims=True)
    lo = np.arange(T) / T
    hi = (np.arange(T) + 1) / T
    s = (preds[..., 0] - preds[..., 1] / 2)[..., None]
    e = (preds[..., 0] + preds[..., 1] / 2)[..., None]
    cover = np.clip((np.minimum(e, hi) - np.maximum(s, lo)) * T, 0.0, 1.0)  # (V, K, T)
    num = np.minimum(cover, profile[:, None, :]).sum(axis=2)
    den = np.maximum(cover, profile[:, None, :]).sum(axis=2)
    return np.argmax(num / den, axis=1)


def _evaluate_batch(model: ToyModel, batch: _Batch) -> dict:
    preds, _, _ = predict(model, batch)
    slot = top1_slot(preds, batch.attention)
    top = preds[np.arange(len(slot)), slot]
    ious = pairwise_iou(top, batch.gts).diagonal()
    crossings = [
        _crossing((c - w / 2, c + w / 2), ev.boundaries) for (c, w), ev in zip(top, batch.events)
    ]
    return {
        "mean_iou": float(np.mean(ious)),
        "boundary_crossing_rate": float(np.mean(crossings)),
        "top1": top,
    }


def evaluate(model: ToyModel, dataset, detector: DetectorConfig = DetectorConfig()) -> dict:
    """Top-1 mean IoU against the ground truth and pseudo-event crossing rate.

    A prediction crosses a boundary when it extends past it by more than 10%
    of its own width on both sides.
    """
    if model.positions.shape[0] != dataset[0].n_frames:
        raise ValueError("model and dataset disagree on the number of frames")
    if model.weights.shape[2] != dataset[0].features.shape[1] + model.positions.shape[1]:
        raise ValueError("model and dataset disagree on the feature dimension")
    out = _evaluate_batch(model, _prepare(dataset, model.temperature, detector))
    return {"mean_iou": out["mean_iou"], "boundary_crossing_rate": out["boundary_crossing_rate"]}


def _step(model: ToyModel, grads: dict, step: float) -> ToyModel:
    out = model.copy()
    out.weights = model.weights - step * grads["weights"]
    out.bias = model.bias - step * grads["bias"]
    out.positions = model.positions - step * grads["positions"]
    return out


def train(dataset, use_evt: bool = True, use_pos: bool = True, cfg: TrainConfig = TrainConfig()):
    """Full-batch gradient descent with step halving; returns ``(model, ExperimentReport)``.

    Each epoch tries a step of ``cfg.lr`` and halves it (up to
    ``cfg.max_halvings`` times) until the objective does not increase; if no
    step qualifies the parameters stay put. The L1 terms make the objective
    piecewise linear, where a fixed step keeps overshooting.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    T = dataset[0].n_frames
    model = ToyModel.init(T, dataset[0].features.shape[1], cfg.K, cfg.d_pos, cfg.seed, cfg.init, cfg.temperature)
    batch = _prepare(dataset, cfg.temperature, cfg.detector)
    initial = _evaluate_batch(model, batch)
    losses, mnts = [], []
    value, mnt, grads = _objective(model, batch, use_evt, use_pos, cfg.weights)
    for epoch in range(cfg.epochs):
        if not math.isfinite(value):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}")
        losses.append(value)
        mnts.append(mnt)
        step = cfg.lr
        for _ in range(cfg.max_halvings + 1):
            trial = _step(model, grads, step)
            t_value, t_mnt, t_grads = _objective(trial, batch, use_evt, use_pos, cfg.weights)
            if not math.isfinite(t_value):
                raise DivergenceError(f"loss became non-finite at epoch {epoch + 1}")
            if t_value <= value:
                model, value, mnt, grads = trial, t_value, t_mnt, t_grads
                break
            step *= 0.5
    final = _evaluate_batch(model, batch)
    report = ExperimentReport(
        use_evt=use_evt,
        use_pos=use_pos,
        seed=cfg.seed,
        mean_iou=final["mean_iou"],
        boundary_crossing_rate=final["boundary_crossing_rate"],
        loss_curve=losses,
        mnt_curve=mnts,
        initial={k: initial[k] for k in ("mean_iou", "boundary_crossing_rate")},
        first_video={
            "top1": [float(final["top1"][0, 0] - final["top1"][0, 1] / 2), float(final["top1"][0, 0] + final["top1"][0, 1] / 2)],
            "gt": [float(batch.gts[0, 0] - batch.gts[0, 1] / 2), float(batch.gts[0, 0] + batch.gts[0, 1] / 2)],
            "pseudo_boundaries": [float(b) for b in batch.events[0].boundaries],
        },
    )
    return model, report


@dataclass(frozen=True)
class AblationConfig:
    n_videos: int = 50
    T: int = 60
    D: int = 16
    n_events_range: tuple[int, int] = (2, 5)
    noise_sigma: float = 0.1
    seeds: tuple[int, ...] = tuple(range(10))
    toggles: tuple[tuple[bool, bool], ...] = ((False, False), (True, False), (True, True))
    train: TrainConfig = TrainConfig()


def run_ablation(cfg: AblationConfig = AblationConfig(), threads: int = 1) -> list[ExperimentReport]:
    """Train every ``(use_evt, use_pos)`` toggle on every seed's dataset.

    Seed ``s`` controls both the dataset and the model initialization.
    Reports come back seed-major, toggles in the configured order.
    """
    jobs = [(s, t) for s in cfg.seeds for t in cfg.toggles]
    datasets = {}

    def data(seed):
        if seed not in datasets:
            datasets[seed] = generate_dataset(cfg.n_videos, cfg.T, cfg.D, cfg.n_events_range, cfg.noise_sigma, seed)
        return datasets[seed]

    for s in cfg.seeds:
        data(s)

    def work(job):
        seed, (use_evt, use_pos) = job
        _, report = train(datasets[seed], use_evt, use_pos, replace(cfg.train, seed=seed))
        return report

    if threads <= 1:
        return [work(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, jobs))


def summarize(reports: list[ExperimentReport]) -> dict:
    """Mean IoU and crossing rate per toggle, averaged over seeds."""
    groups: dict[tuple[bool, bool], list[ExperimentReport]] = {}
    for r in reports:
        groups.setdefault((r.use_evt, r.use_pos), []).append(r)
    out = {}
    for (e, p), rs in groups.items():
        key = "mnt" + ("+evt" if e else "") + ("+pos" if p else "")
        out[key] = {
            "mean_iou": float(np.mean([r.mean_iou for r in rs])),
            "boundary_crossing_rate": float(np.mean([r.boundary_crossing_rate for r in rs])),
            "n_seeds": len(rs),
        }
    return out
