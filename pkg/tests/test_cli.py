import json
import subprocess
import sys

import numpy as np
import pytest

from anonavila.cli import build_parser, main
from anonavila.embedding_store import EmbeddingRecord, EmbeddingSet, encode_embedding_set, write_embedding_set
from anonavila.scoring import read_scores_csv


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    assert main(["synth", "--out-dir", str(data), "--n-train", "200", "--n-val", "50",
                 "--n-test-normal", "50", "--n-test-abnormal", "50", "--seed", "2"]) == 0
    return root, data


def _terms(data):
    return ["--terms-normal", str(data / "terms_normal.json"), "--terms-abnormal", str(data / "terms_abnormal.json"),
            "--text-normal", str(data / "text_normal.nave"), "--text-abnormal", str(data / "text_abnormal.nave")]


@pytest.fixture(scope="module")
def pipeline(bench):
    root, data = bench
    run = root / "run"
    run.mkdir()
    assert main(["--threads", "1", "train", "--train", str(data / "train.nave"), *_terms(data),
                 "--out", str(run / "model.navm"), "--accum", "1", "--seed", "3"]) == 0
    assert main(["centroids", "--model", str(run / "model.navm"), "--val", str(data / "val.nave"),
                 *_terms(data), "--out", str(run / "centroids.json")]) == 0
    assert main(["score", "--model", str(run / "model.navm"), "--centroids", str(run / "centroids.json"),
                 "--images", str(data / "test.nave"), *_terms(data), "--out", str(run / "scores.csv")]) == 0
    return run


def test_train_defaults():
    args = build_parser().parse_args(["train", "--train", "t", "--terms-normal", "a", "--terms-abnormal", "b",
                                      "--text-normal", "c", "--text-abnormal", "d", "--out", "m"])
    assert (args.batch_size, args.accum, args.epochs, args.lr) == (100, 100, 1, 0.001)


def test_validate(tmp_path, capsys):
    good = EmbeddingSet(4, [EmbeddingRecord("a", np.ones(4, np.float32))])
    write_embedding_set(good, tmp_path / "g.nave")
    assert main(["validate", "--embeddings", str(tmp_path / "g.nave")]) == 0
    raw = bytearray(encode_embedding_set(good))
    raw[-16:-12] = np.float32(np.nan).tobytes()
    (tmp_path / "nan.nave").write_bytes(bytes(raw))
    capsys.readouterr()
    assert main(["validate", "--embeddings", str(tmp_path / "nan.nave")]) == 1
    assert "'a'" in capsys.readouterr().err
    (tmp_path / "t.nave").write_bytes(bytes(raw[:-3]))
    assert main(["validate", "--embeddings", str(tmp_path / "t.nave")]) == 1


def test_usage_errors(bench):
    _, data = bench
    with pytest.raises(SystemExit) as info:
        main(["train", "--train", str(data / "train.nave"), "--out", "x"])
    assert info.value.code == 2


def test_batch_size_one_is_data_error(bench, tmp_path, capsys):
    _, data = bench
    code = main(["--error-json", "train", "--train", str(data / "train.nave"), *_terms(data),
                 "--out", str(tmp_path / "m.navm"), "--batch-size", "1"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "BatchTooSmall" and err["exit_code"] == 1


def test_train_outputs(pipeline):
    report = json.loads((pipeline / "model.navm.report.json").read_text())
    assert report["n_updates"] == 2 and "duration_s" not in report
    manifest = json.loads((pipeline / "model.navm.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 3
    assert len(manifest["inputs"]) == 5 and all(len(h) == 64 for h in manifest["inputs"].values())


def test_score_combiners(bench, pipeline, tmp_path):
    _, data = bench
    base = read_scores_csv(pipeline / "scores.csv")
    assert all(p.score == p.d_normal + p.d_abnormal for p in base)
    assert main(["score", "--model", str(pipeline / "model.navm"), "--centroids", str(pipeline / "centroids.json"),
                 "--images", str(data / "test.nave"), *_terms(data), "--combine", "max",
                 "--out", str(tmp_path / "max.csv")]) == 0
    assert all(p.score == max(p.d_normal, p.d_abnormal) for p in read_scores_csv(tmp_path / "max.csv"))


def test_heatmap_and_eval(pipeline, tmp_path):
    for name, extra in (("eroded", []), ("raw", ["--no-erode"]), ("z", ["--zscore"])):
        assert main(["heatmap", "--scores", str(pipeline / "scores.csv"),
                     "--out-dir", str(tmp_path / name), *extra]) == 0
    eroded = (tmp_path / "eroded" / "slide_scores.csv").read_text()
    raw = (tmp_path / "raw" / "slide_scores.csv").read_text()
    assert eroded != raw
    assert (tmp_path / "eroded" / "heatmap_test_normal_000.pgm").read_bytes().startswith(b"P5")
    assert main(["eval", "--scores", str(pipeline / "scores.csv"),
                 "--slide-scores", str(tmp_path / "eroded" / "slide_scores.csv"),
                 "--out", str(tmp_path / "m.json"), "--table", str(tmp_path / "t.txt")]) == 0
    rows = json.loads((tmp_path / "m.json").read_text())
    assert len(rows) == 6 and all(r["folds"] == 2000 for r in rows)
    assert {r["subject"] for r in rows} == {"patch", "a_max", "a_top1"}
    assert "anonavila" in (tmp_path / "t.txt").read_text()


def test_explain(bench, tmp_path):
    _, data = bench
    assert main(["explain", "--images", str(data / "test.nave"), *_terms(data), "--k", "3",
                 "--ids", "test_00000", "--out", str(tmp_path / "e.json")]) == 0
    out = json.loads((tmp_path / "e.json").read_text())
    assert len(out) == 1 and len(out[0]["normal"]) == 3 and len(out[0]["abnormal"]) == 3


def test_idempotent(bench, pipeline, tmp_path):
    _, data = bench
    assert main(["--threads", "1", "train", "--train", str(data / "train.nave"), *_terms(data),
                 "--out", str(tmp_path / "model.navm"), "--accum", "1", "--seed", "3"]) == 0
    assert (tmp_path / "model.navm").read_bytes() == (pipeline / "model.navm").read_bytes()
    assert (tmp_path / "model.navm.report.json").read_bytes() == (pipeline / "model.navm.report.json").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "anonavila", "validate", "--embeddings", str(tmp_path / "nope")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
