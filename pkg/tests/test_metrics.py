import json

import numpy as np
import pytest

import _oracles as oracle
from _fixtures import random_hd_fixture, random_mr_fixture
from momentprior.metrics import (
    MR_THRESHOLDS,
    HighlightAnnotation,
    MomentPrediction,
    average_precision,
    evaluate_hd,
    evaluate_mr,
    highlight_metrics,
    mean_average_precision,
    read_ground_truth,
    read_predictions,
    recall_at_1,
)


def test_recall_fixture_values():
    # top-1 IoUs 0.8, 0.6, 0.4, 0.9 against gt [0, 10]
    gts = {f"v{i}": [[0.0, 10.0]] for i in range(4)}
    preds = [
        MomentPrediction("v0", [[0.0, 8.0], [20.0, 30.0]], [0.9, 0.1]),
        MomentPrediction("v1", [[0.0, 6.0]], [1.0]),
        MomentPrediction("v2", [[0.0, 4.0]], [1.0]),
        MomentPrediction("v3", [[0.0, 9.0]], [1.0]),
    ]
    r = recall_at_1(preds, gts)
    assert r[0.5] == 0.75 and r[0.7] == 0.5


def test_recall_perfect_and_disjoint():
    gts = {"a": [[1.0, 2.0]], "b": [[3.0, 7.0]]}
    perfect = [MomentPrediction(v, s, [1.0]) for v, s in gts.items()]
    assert set(recall_at_1(perfect, gts).values()) == {1.0}
    far = [MomentPrediction(v, [[50.0, 60.0]], [1.0]) for v in gts]
    assert set(recall_at_1(far, gts).values()) == {0.0}
    empty = [MomentPrediction("a", np.zeros((0, 2)), [])]
    assert recall_at_1(empty, gts)[0.5] == 0.0


def test_ap_lower_scored_hit_is_half():
    pred = MomentPrediction("v", [[20.0, 30.0], [0.0, 10.0]], [0.9, 0.5])
    assert average_precision(pred, np.array([[0.0, 10.0]]), 0.5) == 0.5


def test_perfect_map():
    gts = {"a": [[1.0, 2.0]], "b": [[3.0, 7.0]]}
    preds = [MomentPrediction(v, s, [1.0]) for v, s in gts.items()]
    r = evaluate_mr(preds, gts)
    assert r.map_avg == 1.0 and set(r.map_at.values()) == {1.0}


def test_mr_matches_oracle_on_random_fixtures():
    rng = np.random.default_rng(0)
    for _ in range(200):
        videos, preds, gts = random_mr_fixture(rng)
        r1 = recall_at_1(preds, gts)
        expected_r1 = oracle.recall_at_1(videos, (0.5, 0.7))
        assert r1 == {t: float(v) for t, v in expected_r1.items()}
        m = mean_average_precision(preds, gts)
        per_t, avg = oracle.mean_ap(videos, MR_THRESHOLDS)
        assert m["map_at"] == {t: float(v) for t, v in per_t.items()}
        assert m["map_avg"] == float(avg)


def test_hd_matches_oracle_on_random_fixtures():
    rng = np.random.default_rng(1)
    for _ in range(200):
        videos, anns = random_hd_fixture(rng)
        h = highlight_metrics(anns)
        hd_map, hit = oracle.highlight(videos)
        assert h["hd_map"] == float(hd_map) and h["hit_at_1"] == float(hit)


def test_hd_examples():
    labels = [4, 2, 0, 4, 1]
    perfect = highlight_metrics([HighlightAnnotation("v", labels, labels)])
    assert perfect["hd_map"] == 1.0 and perfect["hit_at_1"] == 1.0
    miss = highlight_metrics([HighlightAnnotation("v", [3, 4, 0], [0.9, 0.5, 0.1])])
    assert miss["hit_at_1"] == 0.0 and miss["hd_map"] == 0.5


def test_hd_three_video_fixture():
    anns = [
        HighlightAnnotation("a", [4, 0, 4, 1], [0.2, 0.9, 0.8, 0.1]),
        HighlightAnnotation("b", [1, 4, 2], [0.3, 0.2, 0.1]),
        HighlightAnnotation("c", [0, 0, 3], [0.5, 0.4, 0.3]),
    ]
    h = highlight_metrics(anns)
    # a: positives at ranks 2 and 3 -> (1/2 + 2/3) / 2; b: rank 2 -> 1/2; c excluded
    assert h["hd_map"] == pytest.approx(((0.5 + 2 / 3) / 2 + 0.5) / 2, abs=1e-15)
    assert h["hit_at_1"] == 0.0 and h["n_excluded"] == 1


def test_hd_all_videos_without_positives():
    with pytest.raises(ValueError, match="very good"):
        evaluate_hd([HighlightAnnotation("v", [0, 1], [0.1, 0.2])])


def test_input_validation():
    with pytest.raises(ValueError, match="end before start"):
        MomentPrediction("v", [[2.0, 1.0]], [1.0])
    with pytest.raises(ValueError, match="2 spans but 1 scores"):
        MomentPrediction("v", [[0.0, 1.0], [1.0, 2.0]], [1.0])
    with pytest.raises(ValueError, match="integers in 0..4"):
        HighlightAnnotation("v", [5], [0.1])
    with pytest.raises(ValueError, match="without ground truth"):
        recall_at_1([MomentPrediction("x", [[0.0, 1.0]], [1.0])], {"v": [[0.0, 1.0]]})


def test_jsonl_readers(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text(json.dumps({"video_id": "a", "spans": [[0, 1], [2, 3]]}) + "\n\n")
    (pred,) = read_predictions(p)
    np.testing.assert_array_equal(pred.ranked(), [[0, 1], [2, 3]])
    g = tmp_path / "g.jsonl"
    g.write_text('{"video_id": "a", "spans": [[0, 1]]}\n{"video_id": "a", "spans": [[0, 1]]}\n')
    with pytest.raises(ValueError, match="duplicate"):
        read_ground_truth(g)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    with pytest.raises(ValueError, match=":1: invalid JSON"):
        read_predictions(bad)


def test_report_serialization():
    gts = {"a": [[1.0, 2.0]]}
    r = evaluate_mr([MomentPrediction("a", [[1.0, 2.0]], [1.0])], gts)
    header, row = r.csv_row()
    assert len(header) == len(row)
    assert json.loads(json.dumps(r.as_dict()))["map_avg"] == 1.0
