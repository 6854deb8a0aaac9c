import json
import sys

import numpy as np
import pytest

from _fixtures import three_block_video
from momentprior.embedstore import EmbeddingTable, save_table
from momentprior.feasibility import fixture_table, fixture_triplets, save_triplets


def _jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


@pytest.fixture(scope="session")
def cli_inputs(tmp_path_factory):
    """Small input files for every CLI subcommand, keyed by role."""
    d = tmp_path_factory.mktemp("inputs")
    rng = np.random.default_rng(0)
    files = {}
    table = EmbeddingTable(tuple(f"w{i}" for i in range(6)), rng.standard_normal((6, 4)))
    save_table(table, d / "table.csv")
    files["table_csv"] = str(d / "table.csv")
    features = []
    for i in range(3):
        x, _ = three_block_video(i, T=30, min_len=5)
        p = d / f"video{i}.emb"
        save_table(EmbeddingTable(tuple(f"t{k}" for k in range(len(x))), x), p)
        features.append(str(p))
    files["features"] = features
    save_triplets(fixture_triplets()[:30], d / "triplets.json")
    files["triplets"] = str(d / "triplets.json")
    labels = sorted({label for t in fixture_triplets()[:30] for label in t.labels})
    save_table(fixture_table().select(labels), d / "concepts.emb")
    files["emb"] = str(d / "concepts.emb")
    copy = d / "copy_refiner.py"
    copy.write_text("import shutil, sys\nshutil.copyfile(sys.argv[1], sys.argv[2])\n")
    files["copy_cmd"] = f"{sys.executable} {copy}"
    files["preds"] = _jsonl(d / "preds.jsonl", [
        {"video_id": "a", "spans": [[0, 20], [25, 40]], "scores": [0.9, 0.4]},
        {"video_id": "b", "spans": [[10, 30], [0, 5]], "scores": [0.3, 0.8]},
    ])
    files["gts"] = _jsonl(d / "gts.jsonl", [
        {"video_id": "a", "spans": [[0, 20]]},
        {"video_id": "b", "spans": [[12, 30], [40, 55]]},
    ])
    files["events"] = _jsonl(d / "events.jsonl", [
        {"video_id": "a", "events": [[0, 20], [20, 45], [45, 60]]},
        {"video_id": "b", "events": [[0, 30], [30, 60]]},
    ])
    save_table(EmbeddingTable(tuple(map(str, range(60))), rng.standard_normal((60, 2))), d / "positions.emb")
    files["positions"] = str(d / "positions.emb")
    files["ann"] = _jsonl(d / "ann.jsonl", [
        {"video_id": "a", "labels": [4, 0, 2, 4], "scores": [0.2, 0.9, 0.5, 0.7]},
        {"video_id": "b", "labels": [1, 4, 3], "scores": [0.1, 0.8, 0.4]},
    ])
    (d / "synth.json").write_text(json.dumps({"n_videos": 6, "n_seeds": 2, "train": {"epochs": 4}}))
    files["synth"] = str(d / "synth.json")
    return files


def cli_commands(f, out):
    """One invocation per subcommand; ``out`` is the output directory."""
    return {
        "emb convert": ["emb", "convert", "--in", f["table_csv"], "--out", f"{out}/t.emb"],
        "emb normalize": ["emb", "normalize", "--in", f["table_csv"], "--out", f"{out}/n.csv"],
        "emb sim": ["emb", "sim", "--in", f["table_csv"], "--normalize", "--out", f"{out}/sim.csv", "--svg", f"{out}/sim.svg"],
        "emb info": ["emb", "info", "--in", f["table_csv"], "--out", f"{out}/info.json"],
        "triplets fixture": ["triplets", "fixture", "--out", f"{out}/fx.json", "--emb-out", f"{out}/fx.emb"],
        "triplets synth": ["triplets", "synth", "--triplets", f["triplets"], "--dim", "8", "--out", f"{out}/syn.emb", "--seed", "3"],
        "triplets classify": ["triplets", "classify", "--emb", f["emb"], "--triplets", f["triplets"], "--out", f"{out}/cls.csv"],
        "triplets study toy": ["triplets", "study", "--emb", f["emb"], "--triplets", f["triplets"], "--refiner", "toy",
                               "--alphas", "0,0.5", "--ps", "0,0.3", "--seed", "7", "--threads", "4", "--out", f"{out}/study_toy.csv"],
        "triplets study external": ["triplets", "study", "--emb", f["emb"], "--triplets", f["triplets"], "--refiner", "external",
                                    "--refiner-cmd", f["copy_cmd"], "--alphas", "0.25", "--ps", "0,0.3", "--threads", "4",
                                    "--out", f"{out}/study_ext.csv"],
        "triplets scaling": ["triplets", "scaling", "--dim", "32", "--alphas", "0.25,0.5", "--n-pairs", "5000", "--out", f"{out}/scaling.csv"],
        "events detect": ["events", "detect", "--features", *f["features"], "--frame-period", "0.5", "--threads", "4",
                          "--out", f"{out}/events.jsonl", "--svg", f"{out}/tsm.svg"],
        "loss eval": ["loss", "eval", "--preds", f["preds"], "--gts", f["gts"], "--events", f["events"],
                      "--positions", f["positions"], "--out", f"{out}/loss.json"],
        "loss gradcheck": ["loss", "gradcheck", "--n-points", "5", "--seed", "2", "--out", f"{out}/grad.txt"],
        "eval mr": ["eval", "mr", "--preds", f["preds"], "--gts", f["gts"], "--out", f"{out}/mr.json", "--csv", f"{out}/mr.csv"],
        "eval hd": ["eval", "hd", "--ann", f["ann"], "--out", f"{out}/hd.json", "--csv", f"{out}/hd.csv"],
        "synth run": ["synth", "run", "--config", f["synth"], "--threads", "4", "--out", f"{out}/synth.json"],
    }


class _Blank(dict):
    def __missing__(self, key):
        return []


CLI_NAMES = list(cli_commands(_Blank(), "."))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line per acceptance criterion for the run summary."""

    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
