"""Command-line entry point: ``momentprior <group> <action> [options]``.

Every command that writes a file also writes ``<file>.manifest.json`` with
the fully resolved configuration; ``momentprior replay <manifest>`` runs the
same command again and reproduces the outputs byte for byte.

Exit codes: 0 success, 1 invalid input or usage, 2 internal error,
3 a verification (gradient check) failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import svg
from .embedstore import is_normalized, load_table, normalize, save_table, similarity_matrix
from .events import DetectorConfig, EventSet, FrameFeatures, detect_events_with_scores, tsm
from .feasibility import (
    ExternalRefiner,
    StudyError,
    ToyAttentionRefiner,
    classify_triplet,
    expectation_scaling_check,
    fixture_table,
    fixture_triplets,
    identity_refiner,
    load_triplets,
    run_refine_study,
    save_triplets,
    synth_triplet_table,
    validate_triplets,
)
from .gradsuite import SUITE, run_suite
from .losses import PositionEmbeddings, RegulationWeights, l_evt, l_pos, total_loss
from .matching import MatchWeights, moment_set_loss
from .metrics import evaluate_hd, evaluate_mr, read_ground_truth, read_highlights, read_predictions
from .synthlab import AblationConfig, DivergenceError, TrainConfig, run_ablation, summarize
from .temporal import from_interval, spans_to_array

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- small helpers -------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _default_seed() -> int:
    raw = os.environ.get("MF_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MF_SEED must be an integer, got {raw!r}") from None


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


# -- emb ---------------------------------------------------------------------------


def cmd_emb_convert(a):
    save_table(load_table(a.input, a.in_format), a.out, a.out_format)


def cmd_emb_normalize(a):
    save_table(normalize(load_table(a.input, a.in_format)), a.out, a.out_format)


def cmd_emb_sim(a):
    table = load_table(a.input, a.in_format)
    if a.normalize:
        table = normalize(table)
    sim = similarity_matrix(table)
    rows = [[label, *map(float, sim[i])] for i, label in enumerate(table.labels)]
    _write_text(a.out, _csv(["label", *table.labels], rows))
    if a.svg:
        _write_text(a.svg, svg.heatmap((sim + 1) / 2, title=f"similarity of {len(table)} rows"))


def cmd_emb_info(a):
    table = load_table(a.input, a.in_format)
    norms = np.linalg.norm(table.rows, axis=1)
    info = {
        "count": len(table),
        "dim": table.dim,
        "normalized": bool(len(table) == 0 or is_normalized(table)),
        "min_norm": float(norms.min()) if len(table) else None,
        "max_norm": float(norms.max()) if len(table) else None,
    }
    _write_text(a.out, _json(info))


# -- triplets ----------------------------------------------------------------------


def cmd_triplets_fixture(a):
    triplets = fixture_triplets()
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_triplets(triplets, a.out)
    if a.emb_out:
        save_table(fixture_table(), a.emb_out)


def cmd_triplets_synth(a):
    triplets = load_triplets(a.triplets)
    table = synth_triplet_table(triplets, a.dim, a.unreasonable_fraction, a.seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_table(table, a.out)


def cmd_triplets_classify(a):
    table = load_table(a.emb)
    triplets = load_triplets(a.triplets)
    validate_triplets(table, triplets)
    rows = []
    for t in triplets:
        v = classify_triplet(table, t)
        rows.append([t.paired[0], t.paired[1], t.outlier, v.paired_sim, v.max_unpaired_sim, int(v.reasonable)])
    _write_text(a.out, _csv(["paired_a", "paired_b", "outlier", "paired_sim", "max_unpaired_sim", "reasonable"], rows))
    n_bad = sum(1 for r in rows if not r[5])
    print(f"{n_bad} of {len(rows)} triplets unreasonable", file=sys.stderr)


def _refiner(a, dim: int):
    if a.refiner == "identity":
        return identity_refiner
    if a.refiner == "toy":
        if a.refiner_weights:
            return ToyAttentionRefiner.load(a.refiner_weights)
        return ToyAttentionRefiner.random(dim, a.toy_depth, a.seed)
    if not a.refiner_cmd:
        raise UsageError("--refiner external needs --refiner-cmd")
    return ExternalRefiner(a.refiner_cmd, a.refiner_timeout)


def cmd_triplets_study(a):
    table = load_table(a.emb)
    triplets = load_triplets(a.triplets)
    reports = run_refine_study(table, triplets, _refiner(a, table.dim), a.alphas, a.ps, a.seed, a.threads)
    header = [
        "alpha", "p", "n_triplets", "n_unreasonable_before", "n_improved", "n_deteriorated",
        "improved_proportion", "deteriorated_proportion",
    ]
    rows = [[r.alpha, r.p, r.n_triplets, r.n_unreasonable_before, r.n_improved, r.n_deteriorated,
             r.improved_proportion, r.deteriorated_proportion] for r in reports]
    _write_text(a.out, _csv(header, rows))


def cmd_triplets_scaling(a):
    rows = []
    for alpha in a.alphas:
        r = expectation_scaling_check(a.dim, alpha, a.n_pairs, a.seed, a.rho)
        rel = abs(r["empirical_ratio"] - r["predicted"]) / r["predicted"] if r["predicted"] else float("nan")
        rows.append([alpha, r["empirical_ratio"], r["predicted"], rel, r["mean_base_similarity"], r["mean_fused_similarity"]])
    _write_text(a.out, _csv(["alpha", "empirical_ratio", "predicted", "relative_error", "mean_base", "mean_fused"], rows))


# -- events ------------------------------------------------------------------------


def _detector(a) -> DetectorConfig:
    return DetectorConfig(a.kernel_half, a.min_event_len, a.score_threshold, a.max_depth)


def cmd_events_detect(a):
    cfg = _detector(a)
    paths = list(a.features)
    ids = [Path(p).stem for p in paths]
    if len(set(ids)) != len(ids):
        raise UsageError("feature files must have distinct names (the stem is the video id)")

    def work(i):
        table = load_table(paths[i])
        f = FrameFeatures(ids[i], table.rows, a.frame_period)
        events, scores = detect_events_with_scores(f, cfg)
        return f, events, scores

    if a.threads > 1:
        with ThreadPoolExecutor(max_workers=a.threads) as pool:
            results = list(pool.map(work, range(len(paths))))
    else:
        results = [work(i) for i in range(len(paths))]
    lines = [
        json.dumps({"video_id": f.video_id, "events": events.intervals(), "scores": scores})
        for f, events, scores in results
    ]
    _write_text(a.out, "".join(line + "\n" for line in lines))
    if a.svg and results:
        f, events, _ = results[0]
        cuts = [round(b / a.frame_period) for b in events.boundaries]
        _write_text(a.svg, svg.heatmap((tsm(f) + 1) / 2, cuts, title=f"{f.video_id}: TSM and detected boundaries"))


# -- loss ----------------------------------------------------------------------------


def _read_events(path) -> dict[str, EventSet]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            vid = str(row["video_id"])
            if vid in out:
                raise ValueError(f"{path}:{lineno}: duplicate events for video {vid!r}")
            out[vid] = EventSet.from_intervals(row["events"])
    return out


def _to_unit(intervals: np.ndarray, horizon: float) -> np.ndarray:
    return spans_to_array([from_interval(s / horizon, e / horizon) for s, e in intervals])


def cmd_loss_eval(a):
    w = RegulationWeights(a.lambda_l1, a.lambda_iou, a.lambda_e, a.lambda_p)
    mw = MatchWeights(a.lambda_l1, a.lambda_iou)
    preds = {p.video_id: p for p in read_predictions(a.preds)}
    gts = read_ground_truth(a.gts)
    events = _read_events(a.events)
    pos = PositionEmbeddings(load_table(a.positions).rows, a.frame_period) if a.positions else None
    missing = sorted(set(preds) - set(gts) | set(preds) - set(events))
    if missing:
        raise ValueError(f"videos without ground truth or events: {', '.join(missing)}")
    per_video, totals = [], []
    pos_grad = None if pos is None else np.zeros_like(pos.embeddings)
    for vid in sorted(preds):
        ev = events[vid]
        horizon = ev.horizon
        p_spans = _to_unit(preds[vid].spans, horizon)
        g_spans = _to_unit(gts[vid], horizon)
        mnt = moment_set_loss(p_spans, g_spans, mw)
        evt = l_evt(p_spans, ev.scaled(1.0 / horizon), w, a.mode)
        pos_r = None
        if pos is not None:
            if abs(horizon / a.frame_period - pos.embeddings.shape[0]) > 1e-9:
                raise ValueError(
                    f"video {vid!r}: {horizon / a.frame_period:g} frames but {pos.embeddings.shape[0]} position rows"
                )
            pos_r = l_pos(pos, ev)
            pos_grad += w.lambda_p * pos_r.grads["positions"]
        tot = total_loss(mnt, evt, pos_r, w)
        totals.append(tot.value)
        per_video.append(
            {
                "video_id": vid,
                "mnt": mnt.value,
                "evt": evt.value,
                "pos": None if pos_r is None else pos_r.value,
                "total": tot.value,
                "assignment": [list(p) for p in mnt.diagnostics["assignment"].pairs],
                "grad_spans": tot.grads["spans"].tolist(),
            }
        )
    report = {
        "value": float(np.mean(totals)) if totals else 0.0,
        "weights": asdict(w),
        "mode": a.mode,
        "units": "spans divided by the video length",
        "per_video": per_video,
    }
    if pos_grad is not None:
        report["grad_positions"] = pos_grad.tolist()
    _write_text(a.out, _json(report))


def cmd_loss_gradcheck(a):
    rows = run_suite(a.seed, a.n_points, a.eps, a.tol, names=tuple(a.losses))
    width = max(len(r.name) for r in rows)
    lines = [f"{'loss':<{width}}  points  rejected  max_rel_error  status"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.n_points:6d}  {r.n_rejected:8d}  {r.max_rel_error:13.3e}  {'ok' if r.passed else 'FAIL'}")
    _write_text(a.out, "\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CHECK


# -- eval ------------------------------------------------------------------------------


def _emit_report(a, report):
    _write_text(a.out, _json(report.as_dict()))
    if a.csv:
        header, row = report.csv_row()
        _write_text(a.csv, _csv(header, [row]))


def cmd_eval_mr(a):
    _emit_report(a, evaluate_mr(read_predictions(a.preds), read_ground_truth(a.gts)))


def cmd_eval_hd(a):
    _emit_report(a, evaluate_hd(read_highlights(a.ann)))


# -- synth -----------------------------------------------------------------------------


def _ablation_config(doc: dict, seed: int) -> AblationConfig:
    doc = dict(doc)
    train_doc = dict(doc.pop("train", {}))
    weights = RegulationWeights(**train_doc.pop("weights", {}))
    detector = DetectorConfig(**train_doc.pop("detector", {}))
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(train_doc) - known
    if unknown:
        raise ValueError(f"unknown train keys: {', '.join(sorted(unknown))}")
    train = TrainConfig(**{**train_doc, "weights": weights, "detector": detector})
    n_seeds = int(doc.pop("n_seeds", 10))
    seeds = tuple(int(s) for s in doc.pop("seeds", range(seed, seed + n_seeds)))
    toggles = tuple(tuple(bool(x) for x in t) for t in doc.pop("toggles", AblationConfig.toggles))
    if "n_events_range" in doc:
        doc["n_events_range"] = tuple(doc["n_events_range"])
    known = {f.name for f in fields(AblationConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return AblationConfig(**doc, seeds=seeds, toggles=toggles, train=train)


def _sibling(path: str, suffix: str) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + suffix))


def cmd_synth_run(a):
    doc = {}
    if a.experiment is not None:
        doc = a.experiment  # replay: the resolved config recorded in the manifest
    elif a.config:
        with open(a.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("experiment config must be a JSON object")
    cfg = _ablation_config(doc, a.seed)
    resolved = asdict(cfg)
    a.experiment = resolved
    reports = run_ablation(cfg, a.threads)
    out = {
        "config": resolved,
        "summary": summarize(reports),
        "runs": [
            {
                "seed": r.seed,
                "use_evt": r.use_evt,
                "use_pos": r.use_pos,
                "mean_iou": r.mean_iou,
                "boundary_crossing_rate": r.boundary_crossing_rate,
                "initial": r.initial,
                "final_loss": r.loss_curve[-1] if r.loss_curve else None,
            }
            for r in reports
        ],
    }
    _write_text(a.out, _json(out))
    curves = a.curves = a.curves or _sibling(a.out, ".curves.csv")
    rows = []
    for r in reports:
        name = f"seed{r.seed}-evt{int(r.use_evt)}-pos{int(r.use_pos)}"
        rows += [[name, epoch, loss, mnt] for epoch, (loss, mnt) in enumerate(zip(r.loss_curve, r.mnt_curve))]
    _write_text(curves, _csv(["run", "epoch", "loss", "mnt"], rows))
    figure = a.svg = a.svg or _sibling(a.out, ".svg")
    first = [r for r in reports if r.seed == cfg.seeds[0]]
    if first:
        ex = first[0].first_video
        lines = [("ground truth", [tuple(ex["gt"])])]
        for r in first:
            label = "mnt" + ("+evt" if r.use_evt else "") + ("+pos" if r.use_pos else "")
            lines.append((label, [tuple(r.first_video["top1"])]))
        _write_text(figure, svg.timeline(1.0, lines, ex["pseudo_boundaries"], title="first video: top-1 vs pseudo-events"))


# -- parser ---------------------------------------------------------------------------

# (group, action) -> (handler, output options; the first one set gets the manifest)
COMMANDS = {
    ("emb", "convert"): (cmd_emb_convert, ("out",)),
    ("emb", "normalize"): (cmd_emb_normalize, ("out",)),
    ("emb", "sim"): (cmd_emb_sim, ("out", "svg")),
    ("emb", "info"): (cmd_emb_info, ("out",)),
    ("triplets", "fixture"): (cmd_triplets_fixture, ("out", "emb_out")),
    ("triplets", "synth"): (cmd_triplets_synth, ("out",)),
    ("triplets", "classify"): (cmd_triplets_classify, ("out",)),
    ("triplets", "study"): (cmd_triplets_study, ("out",)),
    ("triplets", "scaling"): (cmd_triplets_scaling, ("out",)),
    ("events", "detect"): (cmd_events_detect, ("out", "svg")),
    ("loss", "eval"): (cmd_loss_eval, ("out",)),
    ("loss", "gradcheck"): (cmd_loss_gradcheck, ("out",)),
    ("eval", "mr"): (cmd_eval_mr, ("out", "csv")),
    ("eval", "hd"): (cmd_eval_hd, ("out", "csv")),
    ("synth", "run"): (cmd_synth_run, ("out", "curves", "svg")),
}

HELP = {
    "emb": "embedding tables (.emb binary or .csv)",
    "triplets": "triplet reasonableness and fusion studies",
    "events": "pseudo-event detection",
    "loss": "regulation losses and gradient verification",
    "eval": "moment retrieval and highlight detection metrics",
    "synth": "synthetic regulation experiment",
}


def _version(p):
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")


def _common(p, threads=False):
    p.add_argument("--seed", type=int, default=None, help="global seed (default: $MF_SEED or 0)")
    if threads:
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results do not depend on it")
    _version(p)


def _fmt(p):
    p.add_argument("--in-format", choices=("binary", "csv"), default=None, help="default: from the file suffix")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="momentprior", description=__doc__.splitlines()[0])
    _version(root)
    groups = root.add_subparsers(dest="group", metavar="COMMAND", parser_class=_Parser)
    groups.required = True
    sub = {}
    for name, text in HELP.items():
        g = groups.add_parser(name, help=text, description=text)
        _version(g)
        sub[name] = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
        sub[name].required = True

    def leaf(group, action, text, threads=False):
        p = sub[group].add_parser(action, help=text, description=text)
        _common(p, threads)
        return p

    p = leaf("emb", "convert", "convert between binary and CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _fmt(p)
    p.add_argument("--out-format", choices=("binary", "csv"), default=None)
    p = leaf("emb", "normalize", "scale every row to unit length")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _fmt(p)
    p.add_argument("--out-format", choices=("binary", "csv"), default=None)
    p = leaf("emb", "sim", "cosine similarity matrix as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--normalize", action="store_true", help="normalize rows first")
    p.add_argument("--svg", default=None, help="also draw the matrix")
    _fmt(p)
    p = leaf("emb", "info", "row count, dimension and norms")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    _fmt(p)

    p = leaf("triplets", "fixture", "write the shipped 200-triplet fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--emb-out", default=None, help="also write the matching embedding table")
    p = leaf("triplets", "synth", "synthesize embeddings with a known share of unreasonable triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--unreasonable-fraction", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p = leaf("triplets", "classify", "reasonable/unreasonable verdict per triplet")
    p.add_argument("--emb", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", default=None)
    p = leaf("triplets", "study", "transition counts over an (alpha, p) grid", threads=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--refiner", choices=("identity", "toy", "external"), default="identity")
    p.add_argument("--refiner-weights", default=None, help=".npz weights for --refiner toy")
    p.add_argument("--toy-depth", type=_positive_int, default=1)
    p.add_argument("--refiner-cmd", default=None, help="command run as CMD input.emb output.emb")
    p.add_argument("--refiner-timeout", type=float, default=300.0)
    p.add_argument("--alphas", type=_floats, default=[0.0, 0.25, 0.5])
    p.add_argument("--ps", type=_floats, default=[0.0, 0.3, 0.5])
    p.add_argument("--out", default=None)
    p = leaf("triplets", "scaling", "Monte-Carlo check of the fused-similarity scaling law")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--alphas", type=_floats, default=[0.1, 0.25, 0.5, 0.75, 0.9])
    p.add_argument("--n-pairs", type=int, default=100_000)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--out", default=None)

    p = leaf("events", "detect", "recursive TSM bisection per feature file", threads=True)
    p.add_argument("--features", nargs="+", required=True, help="one .emb file per video (frames as rows)")
    p.add_argument("--frame-period", type=float, default=1.0, help="seconds per frame")
    d = DetectorConfig()
    p.add_argument("--kernel-half", type=int, default=d.kernel_half)
    p.add_argument("--min-event-len", type=int, default=d.min_event_len)
    p.add_argument("--score-threshold", type=float, default=d.score_threshold)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--out", default=None, help="JSONL path (default: stdout)")
    p.add_argument("--svg", default=None, help="TSM heatmap of the first video")

    p = leaf("loss", "eval", "evaluate the combined loss and its gradients")
    p.add_argument("--preds", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--positions", default=None, help="position embeddings (.emb), one row per frame")
    p.add_argument("--frame-period", type=float, default=1.0)
    p.add_argument("--mode", choices=("best_iou", "all_events"), default="best_iou")
    rw = RegulationWeights()
    p.add_argument("--lambda-l1", type=float, default=rw.lambda_l1)
    p.add_argument("--lambda-iou", type=float, default=rw.lambda_iou)
    p.add_argument("--lambda-e", type=float, default=rw.lambda_e)
    p.add_argument("--lambda-p", type=float, default=rw.lambda_p)
    p.add_argument("--out", default=None)
    p = leaf("loss", "gradcheck", "finite-difference check of every loss gradient")
    p.add_argument("--n-points", type=_positive_int, default=1000)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--losses", nargs="+", choices=SUITE, default=list(SUITE))
    p.add_argument("--out", default=None)

    p = leaf("eval", "mr", "Recall@1 and mAP for moment retrieval")
    p.add_argument("--preds", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--out", default=None, help="JSON report (default: stdout)")
    p.add_argument("--csv", default=None, help="one-row CSV summary")
    p = leaf("eval", "hd", "mAP and HIT@1 for highlight detection")
    p.add_argument("--ann", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)

    p = leaf("synth", "run", "train the toy predictor over the regulation ablation grid", threads=True)
    p.add_argument("--config", default=None, help="JSON experiment config (missing keys take defaults)")
    p.add_argument("--out", required=True)
    p.add_argument("--curves", default=None, help="loss curves CSV (default: <out>.curves.csv)")
    p.add_argument("--svg", default=None, help="first-video figure (default: <out>.svg)")
    p.set_defaults(experiment=None)

    rp = groups.add_parser("replay", help="re-run a command from its manifest", description="re-run a command from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--threads", type=_positive_int, default=None, help="override the worker count")
    rp.add_argument("--out-dir", default=None, help="write outputs here instead of their recorded paths")
    _version(rp)
    return root


# -- manifests and dispatch ---------------------------------------------------------------


def _manifest_path(path: str) -> str:
    return path + ".manifest.json"


def _config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("group", "action", "threads")}


def _write_manifest(group, action, config, outputs):
    written = [config[o] for o in outputs if config.get(o) not in (None, "-")]
    if not written:
        return
    doc = {
        "tool": "momentprior",
        "version": __version__,
        "command": [group, action],
        "seed": config["seed"],
        "config": config,
        "outputs": {o: config.get(o) for o in outputs},
    }
    _write_text(_manifest_path(written[0]), _json(doc))


def _run(group, action, config, threads):
    handler, outputs = COMMANDS[(group, action)]
    ns = argparse.Namespace(**config, threads=threads)
    code = handler(ns)
    # handlers may record resolved settings on the namespace
    _write_manifest(group, action, _config(ns), outputs)
    return EXIT_OK if code is None else code


def _replay(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        group, action = doc["command"]
        config = dict(doc["config"])
    except (KeyError, ValueError, TypeError):
        raise UsageError(f"{args.manifest}: not a momentprior manifest") from None
    if (group, action) not in COMMANDS:
        raise UsageError(f"{args.manifest}: unknown command {group} {action}")
    if args.out_dir:
        for name in COMMANDS[(group, action)][1]:
            if config.get(name) not in (None, "-"):
                config[name] = str(Path(args.out_dir) / Path(config[name]).name)
    threads = args.threads if args.threads is not None else 1
    return _run(group, action, config, threads)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.group == "replay":
            return _replay(args)
        if args.seed is None:
            args.seed = _default_seed()
        config = _config(args)
        return _run(args.group, args.action, config, getattr(args, "threads", 1))
    except (UsageError, ValueError, KeyError, OSError, StudyError, DivergenceError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"momentprior: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort handler for the exit code contract
        print(f"momentprior: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
