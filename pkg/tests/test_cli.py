"""Command line entry points: run, inspect, eval."""
import json
import os

import pytest

from evotir.cli import build_configs, CliError, main
from evotir.datasets import synthetic_digits, write_idx_dataset

ARTIFACTS = ("archive.json", "history.jsonl", "frontier.csv",
             "config.json", "summary.json")

TINY_TOML = """\
workload = "train2fc"
steps = 30
search_n = 192
holdout_n = 64
population = 6
generations = 2
elites = 2
seed = 5
"""


@pytest.fixture(scope="session")
def tiny_run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = base / "run"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return str(out)


def test_run_writes_artifacts(tiny_run_dir):
    for name in ARTIFACTS:
        path = os.path.join(tiny_run_dir, name)
        assert os.path.exists(path), name
    with open(os.path.join(tiny_run_dir, "summary.json")) as f:
        summary = json.load(f)
    assert summary["generations"] == 2
    assert summary["archive_size"] >= 1
    assert summary["evaluations"] >= 6
    with open(os.path.join(tiny_run_dir, "archive.json")) as f:
        archive = json.load(f)
    assert archive["workload"] == "train2fc"
    assert archive["seed"] == 5
    for entry in archive["entries"]:
        assert set(entry) >= {"cost", "error", "edits", "patch",
                              "holdout_cost", "holdout_error"}


def test_run_reports_progress_and_summary(tiny_run_dir, capsys):
    # the session fixture already ran; run again into the same place
    # to capture stdout (cheap at this size)
    rc = main(["run", "--config",
               os.path.join(os.path.dirname(tiny_run_dir), "tiny.toml"),
               "--out", tiny_run_dir])
    out = capsys.readouterr().out
    assert rc == 0
    assert "gen   0" in out
    assert "baseline: cost" in out
    assert "archive:" in out


def test_inspect_prints_patch_and_diff(tiny_run_dir, capsys):
    rc = main(["inspect", "--out", tiny_run_dir, "--index", "0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "archive[0]: cost" in out
    assert "@train_step" in out  # the variant IR is printed in full
    with open(os.path.join(tiny_run_dir, "archive.json")) as f:
        entry = json.load(f)["entries"][0]
    if entry["edits"]:
        assert "--- baseline" in out and "+++ archive[0]" in out


def test_eval_matches_archive(tiny_run_dir, capsys):
    rc = main(["eval", "--out", tiny_run_dir, "--index", "0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "match: yes" in out


def test_eval_holdout_flag(tiny_run_dir, capsys):
    rc = main(["eval", "--out", tiny_run_dir, "--holdout"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "holdout: cost" in out


def test_bad_archive_index_is_usage_error(tiny_run_dir, capsys):
    rc = main(["inspect", "--out", tiny_run_dir, "--index", "999"])
    assert rc == 2
    assert "no index 999" in capsys.readouterr().err


def test_missing_run_dir_is_usage_error(tmp_path, capsys):
    rc = main(["eval", "--out", str(tmp_path / "nope")])
    assert rc == 2
    assert "cannot read run directory" in capsys.readouterr().err


def test_missing_dataset_dir_is_usage_error(tmp_path, capsys):
    # workload construction fails before any search work starts
    rc = main(["run", "--dataset-dir", str(tmp_path / "nope"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "dataset" in capsys.readouterr().err


def test_unknown_setting_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('workload = "train2fc"\nbogus_knob = 3\n')
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "bogus_knob" in capsys.readouterr().err


def test_inconsistent_search_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("population = 2\n")  # default elites will not fit
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "elites" in capsys.readouterr().err


def test_bad_toml_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("population = [unclosed\n")
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "bad TOML" in capsys.readouterr().err


def test_missing_config_file_is_usage_error(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "nope.toml"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "cannot read config" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = tmp_path / "run"
    rc = main(["run", "--config", str(cfg), "--seed", "9",
               "--generations", "1", "--out", str(out)])
    assert rc == 0
    with open(out / "archive.json") as f:
        assert json.load(f)["seed"] == 9
    with open(out / "config.json") as f:
        config = json.load(f)
    assert config["search"]["generations"] == 1
    assert config["workload"]["steps"] == 30  # TOML value survives


def test_idx_dataset_dir_round_trip(tmp_path):
    images, labels = synthetic_digits(300, seed=3)
    write_idx_dataset(str(tmp_path / "data"), images, labels)
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = tmp_path / "run"
    rc = main(["run", "--config", str(cfg),
               "--dataset-dir", str(tmp_path / "data"),
               "--out", str(out)])
    assert rc == 0
    with open(out / "config.json") as f:
        dataset = json.load(f)["workload"]["dataset"]
    assert dataset["source"] == "idx"
    # eval must reconstruct the same workload from config.json
    assert main(["eval", "--out", str(out)]) == 0


def test_predict_workload_runs(tmp_path):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_TOML.replace('"train2fc"', '"predict2fc"'))
    out = tmp_path / "run"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    with open(out / "archive.json") as f:
        assert json.load(f)["workload"] == "predict2fc"
    assert main(["eval", "--out", str(out)]) == 0


def test_shared_shape_keys_set_both_configs():
    name, wcfg, scfg = build_configs(
        {"workload": "train2fc", "features": 64, "classes": 4})
    assert wcfg.features == 64 and wcfg.dataset.features == 64
    assert wcfg.classes == 4 and wcfg.dataset.classes == 4


def test_unknown_workload_is_usage_error():
    with pytest.raises(CliError):
        build_configs({"workload": "mystery"})
