import csv
import json

import numpy as np
import pytest

from lesionscreen import cli
from lesionscreen.dataset import load_manifest
from lesionscreen.external_features import FeatureMatrixFile, write_features

FAST = {
    "segmentation": {"iterations": 60},
    "baseline": {"k": 12},
    "bossanova": {"k": 16, "pca_dims": 16},
    "svm": {"rbf_C_log2": [1, 5], "rbf_gamma_log2": [-7, -3], "linear_C_log10": [-1, 0],
            "inner_folds": 3},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.json").write_text(json.dumps(FAST))
    assert cli.main(["gen", "--out", str(d / "corpus"), "--cases", "30", "--seed", "1",
                     "--size", "64"]) == 0
    assert cli.main(["prepare", "--manifest", str(d / "corpus" / "manifest.csv"), "--subset", "lm+",
                     "--folds", "3", "--seed", "0", "--out", str(d / "plan.csv")]) == 0
    return d


def args(work, *rest):
    return [*rest, "--manifest", str(work / "corpus" / "manifest.csv")]


def test_gen_writes_manifest(work):
    man = load_manifest(work / "corpus" / "manifest.csv")
    assert len(man) == 30 and man.n_positive() == 8


def test_prepare_plan_and_sidecar(work):
    rows = list(csv.reader(open(work / "plan.csv")))
    assert rows[0] == ["case_id", "fold"]
    assert {int(r[1]) for r in rows[1:]} == {0, 1, 2}
    side = json.loads((work / "plan.csv.json").read_text())
    assert side["subset"] == "LMplus" and side["n_folds"] == 3 and side["n_images"] == len(rows) - 1


def test_segment_writes_masks(work):
    rc = cli.main(args(work, "segment", "--out", str(work / "masks"), "--iters", "40"))
    assert rc == 0
    rows = list(csv.DictReader(open(work / "masks" / "masks.csv")))
    assert len(rows) == 30
    assert all((work / "masks" / r["mask_path"]).exists() for r in rows)
    assert all(r["iterations_run"] == "40" for r in rows)


def test_extract_fills_cache(work):
    rc = cli.main(args(work, "extract", "--pipeline", "bossanova", "--cache", str(work / "cache"),
                       "--config", str(work / "fast.json")))
    assert rc == 0
    assert len(list((work / "cache").glob("bossanova-*.bin"))) == 30


@pytest.mark.parametrize("pipeline", ["baseline", "bossanova"])
def test_run_image_pipelines(work, pipeline):
    out = work / f"res_{pipeline}"
    extra = ["--masks", str(work / "masks")] if pipeline == "baseline" else []
    rc = cli.main(args(work, "run", "--pipeline", pipeline, "--plan", str(work / "plan.csv"),
                       "--cache", str(work / "cache"), "--out", str(out),
                       "--config", str(work / "fast.json"), *extra))
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pipeline"] == pipeline and summary["subset"] == "LMplus"
    assert len(summary["fold_auc"]) == 3
    assert 0.0 <= summary["mean_auc"] <= 1.0
    assert (out / "models" / "fold_00" / "svm.bin").exists()
    first = (out / "summary.json").read_bytes()
    assert cli.main(args(work, "run", "--pipeline", pipeline, "--plan", str(work / "plan.csv"),
                         "--cache", str(work / "cache"), "--out", str(out),
                         "--config", str(work / "fast.json"), *extra)) == 0
    assert (out / "summary.json").read_bytes() == first


def test_run_external(work):
    man = load_manifest(work / "corpus" / "manifest.csv")
    r = np.random.default_rng(0)
    ids = tuple(rec.image_path for rec in man.records)
    m = r.normal(size=(len(ids), 32)).astype(np.float32)
    m[:, 0] += 3.0 * np.array([rec.label for rec in man.records])
    write_features(work / "deep.bin", FeatureMatrixFile(ids, m))
    rc = cli.main(args(work, "run", "--pipeline", "external", "--plan", str(work / "plan.csv"),
                       "--features", str(work / "deep.bin"), "--out", str(work / "res_external"),
                       "--config", str(work / "fast.json")))
    assert rc == 0
    summary = json.loads((work / "res_external" / "summary.json").read_text())
    assert summary["mean_auc"] > 0.8


def test_report_table(work):
    dirs = ",".join(str(work / f"res_{p}") for p in ("baseline", "bossanova", "external"))
    assert cli.main(["report", "--results", dirs, "--out", str(work / "table.csv")]) == 0
    rows = list(csv.reader(open(work / "table.csv")))
    assert rows[0] == ["subset", "baseline", "bossanova", "external"]
    assert rows[1][0] == "LMplus" and len(rows) == 2
    for p, cell in zip(rows[0][1:], rows[1][1:]):
        mean = json.loads((work / f"res_{p}" / "summary.json").read_text())["mean_auc"]
        assert cell == f"{100 * mean:.1f}"
    strata = list(csv.reader(open(work / "table_strata.csv")))
    assert strata[0][1:4] == ["baseline_L", "baseline_M", "baseline_H"]
    # LM+ has no high-difficulty images
    assert strata[1][3] == "--"


def _last_json_line(err):
    line = err.strip().splitlines()[-1]
    return json.loads(line)


def test_errors_are_single_json_lines(work, capsys):
    rc = cli.main(["prepare", "--manifest", str(work / "nope.csv"), "--subset", "lm",
                   "--out", str(work / "p.csv")])
    assert rc != 0
    err = _last_json_line(capsys.readouterr().err)
    assert err["command"] == "prepare" and err["error"] == "FileNotFoundError"


def test_run_external_needs_features(work, capsys):
    rc = cli.main(args(work, "run", "--pipeline", "external", "--plan", str(work / "plan.csv"),
                       "--out", str(work / "x")))
    assert rc == 1
    assert "--features" in _last_json_line(capsys.readouterr().err)["message"]


def test_report_missing_summary(work, capsys):
    assert cli.main(["report", "--results", str(work / "void"), "--out", str(work / "t.csv")]) == 1
    assert "summary.json" in _last_json_line(capsys.readouterr().err)["message"]


def test_bad_config_key(work, capsys):
    (work / "bad.json").write_text('{"svm": {"kernel": "poly"}}')
    rc = cli.main(args(work, "segment", "--out", str(work / "m2"), "--config", str(work / "bad.json")))
    assert rc == 1
    assert "kernel" in _last_json_line(capsys.readouterr().err)["message"]


def test_argparse_rejects_unknown_subset(work):
    with pytest.raises(SystemExit):
        cli.main(args(work, "prepare", "--subset", "everything", "--out", "x"))
