import json

import pytest

from ctgarma import __version__
from ctgarma.cli import main, read_config_file, write_config_file
from ctgarma.ingest import write_dataset
from ctgarma.pipeline import RunConfig

FAST = ["--window-len", "2000"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def run_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("run", "--data", dataset_dir, "--out", out, "--seed", 11, *FAST) == 0
    return out


def test_run_artifacts(run_dir):
    for name in ("clean_summary.csv", "arma_windows.csv", "arma_summary.csv", "features.csv",
                 "features_all.csv", "labels.csv", "report.json", "roc.csv", "manifest.json",
                 "config.txt", "clean/s0000.csv", "events/s0000.csv"):
        assert (run_dir / name).exists(), name
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 11
    assert manifest["version"] == __version__
    assert manifest["partial"] is False
    assert manifest["cohort"]["total"] == 12 and manifest["cohort"]["excluded"] == 2
    assert (run_dir / "roc.csv").read_text().startswith("threshold,fpr,tpr\ninf,0.0,0.0\n")
    assert (run_dir / "events/s0000.csv").read_text().startswith(
        "kind,start_s,end_s,duration_s,height,prominence,lag_s,class\n")
    assert (run_dir / "arma_windows.csv").read_text().startswith(
        "patient_id,p,alpha1,alpha2,beta1,polemag1,polemag2,residual_var\n")
    assert (run_dir / "features.csv").read_text().splitlines()[0] == (
        "patient_id,fhr_range,fhr_max,fhr_median,fhr_autocorr50,"
        "contraction_mean_prominence,delta_r1,delta_r2")
    assert (run_dir / "clean/s0000.csv").read_text().startswith("t_s,fhr_bpm,uc,valid\n")
    report = json.loads((run_dir / "report.json").read_text())
    assert report["n_patients"] == 10 and len(report["patients"]) == 10


def test_run_is_reproducible_from_its_config(run_dir, dataset_dir, tmp_path):
    again = tmp_path / "again"
    assert run("run", "--config", run_dir / "config.txt", "--out", again) == 0
    assert (again / "report.json").read_bytes() == (run_dir / "report.json").read_bytes()
    assert (again / "features_all.csv").read_bytes() == \
        (run_dir / "features_all.csv").read_bytes()


def test_missing_dataset_exit_code(tmp_path, capsys):
    missing = tmp_path / "does-not-exist"
    assert run("run", "--data", missing, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config(tmp_path, dataset_dir, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("no_such_key = 3\n")
    assert run("labels", "--config", cfg, "--data", dataset_dir, "--out", tmp_path) == 2
    cfg.write_text("mode = kfold\n")
    assert run("labels", "--config", cfg, "--data", dataset_dir, "--out", tmp_path) == 2
    assert run("labels", "--data", dataset_dir, "--out", tmp_path, "--features", "fs9") == 2
    assert run("labels", "--config", tmp_path / "missing.txt") == 2


def test_config_file_round_trip(tmp_path):
    cfg = RunConfig.from_flat({**RunConfig().to_flat(), "seed": 5, "gamma": 0.3,
                               "literal_sign": True, "model": "svm", "data": "x"})
    path = write_config_file(cfg, tmp_path / "c.txt")
    assert RunConfig.from_flat({**RunConfig().to_flat(), **read_config_file(path)}) == cfg


def test_cli_overrides_config_file(tmp_path, dataset_dir):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"data = {dataset_dir}\nseed = 1\nmode = 5fold\nwindow_len = 2000\n")
    out = tmp_path / "o"
    assert run("eval", "--config", cfg, "--seed", 2, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 2 and report["mode"] == "5fold"
    assert len(report["folds"]) == 5


def test_stage_commands(dataset_dir, tmp_path):
    out = tmp_path / "stages"
    base = ["--data", dataset_dir, "--out", out, *FAST]
    for cmd in ("ingest", "labels", "arma"):
        assert run(cmd, *base) == 0
    assert (out / "ingest.csv").read_text().count("\n") == 13
    labels = (out / "labels.csv").read_text().splitlines()
    assert labels[0] == "patient_id,class" and len(labels) == 13
    summary = (out / "arma_summary.csv").read_text().splitlines()
    assert summary[0] == "patient_id,windows,delta_r1,delta_r2"


def test_feature_file_and_svm(dataset_dir, tmp_path):
    names = tmp_path / "names.txt"
    names.write_text("delta_r1\ndelta_r2  # pole spreads\nparity\n")
    out = tmp_path / "o"
    assert run("eval", "--data", dataset_dir, "--out", out, "--features", f"file:{names}",
               "--model", "svm", "--ensemble", "vote", *FAST) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["features"] == ["delta_r1", "delta_r2", "parity"]
    assert report["model"] == "svm" and report["ensemble"] == "vote"


def test_tables(dataset_dir, tmp_path):
    out = tmp_path / "t"
    assert run("table-ii", "--data", dataset_dir, "--out", out, "--svm-train-size", 6,
               *FAST) == 0
    rows = json.loads((out / "table_ii.json").read_text())
    assert [r["tier"] for r in rows] == [0.0, 0.75, 0.80]
    assert run("table-iii", "--data", dataset_dir, "--out", out, *FAST) == 0
    rows = json.loads((out / "table_iii.json").read_text())
    assert [r["features"] for r in rows] == ["arma", "fs1", "fs2", "fs3", "fs4"]
    assert all(r["fold_plan"] == rows[0]["fold_plan"] for r in rows)


def test_synth_and_render(tmp_path, run_dir):
    assert run("synth", "--out", tmp_path / "d", "--n", 3, "--duration-s", 60) == 0
    assert len(list((tmp_path / "d").glob("s*.csv"))) == 3
    assert run("render", "--run", run_dir, "--out", tmp_path / "fig") == 0
    svgs = sorted(p.name for p in (tmp_path / "fig").glob("*.svg"))
    assert svgs == ["delta_r.svg", "roc.svg", "trace_s0000.svg"]
    assert (tmp_path / "fig" / "roc.svg").read_text().lstrip().startswith("<?xml")
    assert run("render", "--run", tmp_path / "nothing") == 2


def test_unknown_feature_for_order(tmp_path, dataset_dir):
    code = run("run", "--data", dataset_dir, "--out", tmp_path / "o", "--features", "arma",
               "--arma-n", 1, *FAST)
    assert code == 2


def test_partial_run_flagged(tmp_path, small_cohort, capsys):
    data = write_dataset(small_cohort[:6], tmp_path / "few")
    out = tmp_path / "p"
    assert run("run", "--data", data, "--out", out, *FAST) == 1
    assert "ctgarma.ml.protocol" in capsys.readouterr().err
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["partial"] is True
    assert manifest["diagnostics"][-1].startswith("stage eval:")
    assert "features.csv" in manifest["outputs"] and "report.json" not in manifest["outputs"]
