"""Acceptance criteria, one test each.

Every test records a single ``PASS``/``FAIL`` line with its measured values
and runtime; the lines are repeated in the pytest terminal summary.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

import _oracles as oracle
from _fixtures import random_hd_fixture, random_mr_fixture, three_block_video
from conftest import cli_commands
from momentprior.cli import main
from momentprior.events import FrameFeatures, check_partition, detect_events
from momentprior.feasibility import (
    ExternalRefiner,
    StudyError,
    expectation_scaling_check,
    fixture_table,
    fixture_triplets,
    identity_refiner,
    run_refine_study,
)
from momentprior.gradsuite import SUITE, run_suite
from momentprior.matching import hungarian
from momentprior.metrics import (
    MR_THRESHOLDS,
    HighlightAnnotation,
    MomentPrediction,
    average_precision,
    highlight_metrics,
    mean_average_precision,
    recall_at_1,
)
from momentprior.synthlab import AblationConfig, run_ablation, summarize
from momentprior.temporal import Span, from_interval, giou, iou

ALPHAS_SCALING = (0.1, 0.25, 0.5, 0.75, 0.9)
STUDY_ALPHAS = (0.0, 0.25, 0.5)
STUDY_PS = (0.0, 0.3, 0.5)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def _line(n, ok, text, seconds, limit=None):
    budget = f" (runtime {seconds:.2f} s" + (f", limit {limit:g} s)" if limit else ")")
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}{budget}"


def test_criterion_01_scaling_law(acceptance_line):
    with Timer() as t:
        results = {a: expectation_scaling_check(256, a, 100_000, seed=0) for a in ALPHAS_SCALING}
    errors = {a: abs(r["empirical_ratio"] - (1 - a) ** 2) / (1 - a) ** 2 for a, r in results.items()}
    ok = all(e < 0.05 for e in errors.values()) and t.seconds < 10
    detail = ", ".join(f"a={a:g}: {results[a]['empirical_ratio']:.4f} vs {(1 - a) ** 2:.4f} ({100 * e:.2f}%)" for a, e in errors.items())
    acceptance_line(_line(1, ok, f"fused/base ratio within 5% of (1-a)^2 [{detail}]", t.seconds, 10))
    assert ok


def _identity_grid():
    return run_refine_study(fixture_table(), fixture_triplets(), identity_refiner, STUDY_ALPHAS, STUDY_PS, seed=0)


def test_criterion_02_identity_refiner(acceptance_line):
    with Timer() as t:
        reports = _identity_grid()
    ok = (
        len(fixture_triplets()) == 200
        and len(reports) == 9
        and all(r.n_improved == 0 and r.n_deteriorated == 0 for r in reports)
        and t.seconds < 5
    )
    unreasonable = [r.n_unreasonable_before for r in reports]
    acceptance_line(_line(2, ok, f"identity refiner: 0 improved, 0 deteriorated in all 9 cells (unreasonable per cell {unreasonable})", t.seconds, 5))
    assert ok


def test_criterion_03_external_refiner(acceptance_line, tmp_path):
    copy = tmp_path / "copy.py"
    copy.write_text("import shutil, sys\nshutil.copyfile(sys.argv[1], sys.argv[2])\n")
    reorder = tmp_path / "reorder.py"
    reorder.write_text(
        "import sys\nfrom momentprior.embedstore import EmbeddingTable, load_table, save_table\n"
        "t = load_table(sys.argv[1])\nsave_table(EmbeddingTable(t.labels[::-1], t.rows[::-1]), sys.argv[2])\n"
    )
    with Timer() as t:
        external = run_refine_study(
            fixture_table(), fixture_triplets(), ExternalRefiner([sys.executable, str(copy)]), STUDY_ALPHAS, STUDY_PS, seed=0
        )
        identical = [r.as_dict() for r in external] == [r.as_dict() for r in _identity_grid()]
        try:
            run_refine_study(fixture_table(), fixture_triplets(), ExternalRefiner([sys.executable, str(reorder)]), [0.5], [0.0])
            message = None
        except StudyError as exc:
            message = str(exc)
    ok = identical and message is not None and "label order changed" in message
    acceptance_line(_line(3, ok, f"external copy reproduces the grid bit-exactly: {identical}; reorder rejected with: {message!r}", t.seconds))
    assert ok


def test_criterion_04_hungarian_oracle(acceptance_line):
    rng = np.random.default_rng(0)
    mismatches = 0
    with Timer() as t:
        for _ in range(1000):
            n, m = rng.integers(1, 7, size=2)
            cost = rng.uniform(0, 10, (n, m))
            best, _ = oracle.brute_force_assignment(cost)
            mismatches += hungarian(cost).total_cost != best
    ok = mismatches == 0 and t.seconds < 5
    acceptance_line(_line(4, ok, f"1000 random matrices up to 6x6, {mismatches} cost mismatches vs brute force", t.seconds, 5))
    assert ok


def test_criterion_05_giou_properties(acceptance_line):
    rng = np.random.default_rng(0)
    worst = 0.0
    violations = 0
    with Timer() as t:
        for _ in range(10_000):
            a = Span(rng.uniform(0, 10), rng.uniform(0.1, 5))
            b = Span(rng.uniform(0, 10), rng.uniform(0.1, 5))
            ia, ga = iou(a, b), giou(a, b)
            violations += ga > ia
            violations += ia != iou(b, a) or ga != giou(b, a)
            shift, scale = rng.uniform(-100, 100), rng.uniform(0.1, 10)
            worst = max(
                worst,
                abs(iou(a.shifted(shift), b.shifted(shift)) - ia),
                abs(giou(a.shifted(shift), b.shifted(shift)) - ga),
                abs(iou(a.scaled(scale), b.scaled(scale)) - ia),
                abs(giou(a.scaled(scale), b.scaled(scale)) - ga),
            )
        fixed = [
            (iou(from_interval(0, 10), from_interval(0, 10)), 1.0),
            (giou(from_interval(0, 10), from_interval(0, 10)), 1.0),
            (iou(from_interval(0, 10), from_interval(5, 15)), 1 / 3),
            (giou(from_interval(0, 10), from_interval(5, 15)), 1 / 3),
            (giou(from_interval(0, 2), from_interval(8, 10)), -0.6),
        ]
    fixed_ok = all(abs(got - want) < 1e-15 for got, want in fixed)
    ok = violations == 0 and worst < 1e-12 and fixed_ok and t.seconds < 2
    acceptance_line(_line(
        5, ok, f"10^4 pairs: {violations} order/symmetry violations, max invariance error {worst:.1e}, fixed values ok: {fixed_ok}", t.seconds, 2
    ))
    assert ok


def test_criterion_06_gradients(acceptance_line):
    with Timer() as t:
        rows = run_suite(seed=0, n_points=1000, tolerance=1e-4)
    ok = [r.name for r in rows] == list(SUITE) and all(r.passed for r in rows) and t.seconds < 30
    detail = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in rows)
    acceptance_line(_line(6, ok, f"max relative error at 1000 points each [{detail}]", t.seconds, 30))
    assert ok


def test_criterion_07_event_detection(acceptance_line):
    hits = total = 0
    singles = 0
    partition_ok = True
    with Timer() as t:
        for seed in range(100):
            x, cuts = three_block_video(seed, T=60, sigma=0.05)
            ev = detect_events(FrameFeatures(f"v{seed}", x))
            found = ev.boundaries
            total += len(cuts)
            hits += sum(any(abs(c - b) <= 1 for b in found) for c in cuts)
            rng = np.random.default_rng(seed)
            const = np.tile(rng.standard_normal(16), (60, 1))
            ev_const = detect_events(FrameFeatures(f"c{seed}", const))
            singles += len(ev_const) == 1
            for e in (ev, ev_const):
                try:
                    check_partition(e.events, e.horizon)
                except ValueError:
                    partition_ok = False
    rate = hits / total
    ok = rate >= 0.9 and singles == 100 and partition_ok and t.seconds < 10
    acceptance_line(_line(
        7, ok, f"{hits}/{total} boundaries within +-1 frame ({100 * rate:.1f}%), {singles}/100 constant videos single-event, partitions valid: {partition_ok}", t.seconds, 10
    ))
    assert ok


def test_criterion_08_metrics_oracle(acceptance_line):
    rng = np.random.default_rng(0)
    mismatches = 0
    with Timer() as t:
        for _ in range(200):
            videos, preds, gts = random_mr_fixture(rng)
            r1 = recall_at_1(preds, gts)
            mismatches += r1 != {k: float(v) for k, v in oracle.recall_at_1(videos, (0.5, 0.7)).items()}
            for (spans, scores, g), pred in zip(videos, preds):
                for th in MR_THRESHOLDS:
                    want = oracle.stepwise_ap(oracle.greedy_tp(spans, scores, g, th), len(g)) if spans else 0
                    mismatches += average_precision(pred, np.array(g), th) != want
            m = mean_average_precision(preds, gts)
            per_t, avg = oracle.mean_ap(videos, MR_THRESHOLDS)
            mismatches += m["map_at"] != {k: float(v) for k, v in per_t.items()}
            mismatches += m["map_avg"] != float(avg)
            hd_videos, anns = random_hd_fixture(rng)
            h = highlight_metrics(anns)
            hd_map, hit = oracle.highlight(hd_videos)
            mismatches += h["hd_map"] != float(hd_map) or h["hit_at_1"] != float(hit)
        gt10 = {f"v{i}": [[0.0, 10.0]] for i in range(4)}
        tops = [[0.0, 8.0], [0.0, 6.0], [0.0, 4.0], [0.0, 9.0]]
        recall = recall_at_1([MomentPrediction(f"v{i}", [s], [1.0]) for i, s in enumerate(tops)], gt10)
        ap = average_precision(MomentPrediction("v", [[20.0, 30.0], [0.0, 10.0]], [0.9, 0.5]), np.array([[0.0, 10.0]]), 0.5)
        hand_ok = recall == {0.5: 0.75, 0.7: 0.5} and ap == 0.5
        perfect = highlight_metrics([HighlightAnnotation("v", [4, 1, 0], [4, 1, 0])])
        hand_ok = hand_ok and perfect["hd_map"] == 1.0 and perfect["hit_at_1"] == 1.0
    ok = mismatches == 0 and hand_ok and t.seconds < 10
    acceptance_line(_line(8, ok, f"200 random fixtures, {mismatches} mismatches vs brute-force oracle; hand values ok: {hand_ok}", t.seconds, 10))
    assert ok


def test_criterion_09_regulation_effect(acceptance_line):
    with Timer() as t:
        reports = run_ablation(AblationConfig())
    s = summarize(reports)
    base, evt, pos = s["mnt"], s["mnt+evt"], s["mnt+evt+pos"]
    reduction = 1 - evt["boundary_crossing_rate"] / base["boundary_crossing_rate"]
    iou_drop = base["mean_iou"] - evt["mean_iou"]
    pos_ok = pos["boundary_crossing_rate"] <= evt["boundary_crossing_rate"]
    ok = reduction >= 0.30 and iou_drop <= 0.02 and pos_ok and t.seconds < 60
    acceptance_line(_line(
        9,
        ok,
        f"crossing {base['boundary_crossing_rate']:.3f} -> {evt['boundary_crossing_rate']:.3f} with L_evt "
        f"({100 * reduction:+.1f}% reduction, need >= 30%), mean IoU {base['mean_iou']:.3f} -> {evt['mean_iou']:.3f} "
        f"(drop {iou_drop:+.3f}, limit 0.02), with L_pos crossing {pos['boundary_crossing_rate']:.3f} (not higher: {pos_ok})",
        t.seconds,
        60,
    ))
    assert reduction >= 0.30, f"L_evt changed the crossing rate by {100 * reduction:+.1f}%, need a reduction of at least 30%"
    assert iou_drop <= 0.02
    assert pos_ok
    assert t.seconds < 60


def test_criterion_10_determinism(acceptance_line, cli_inputs, tmp_path):
    failures = []
    commands = cli_commands(cli_inputs, tmp_path / "first")
    with Timer() as t:
        for name, argv in commands.items():
            first = tmp_path / "first"
            first.mkdir(exist_ok=True)
            before = set(first.glob("*.manifest.json"))
            if main(argv) != 0:
                failures.append(f"{name}: exit code")
                continue
            (manifest,) = set(first.glob("*.manifest.json")) - before
            written = {Path(p).name for p in _outputs(manifest)}
            for threads in ("1", "4"):
                target = tmp_path / f"replay{threads}-{name.replace(' ', '_')}"
                target.mkdir()
                if main(["replay", str(manifest), "--threads", threads, "--out-dir", str(target)]) != 0:
                    failures.append(f"{name}: replay exit code")
                    continue
                for fname in written:
                    if (first / fname).read_bytes() != (target / fname).read_bytes():
                        failures.append(f"{name}: {fname} differs with --threads {threads}")
    ok = not failures
    acceptance_line(_line(10, ok, f"{len(commands)} subcommand runs replayed from manifests at --threads 1 and 4, differences: {failures or 'none'}", t.seconds))
    assert ok, failures


def _outputs(manifest):
    doc = json.loads(Path(manifest).read_text())
    return [p for p in doc["outputs"].values() if p not in (None, "-")]
