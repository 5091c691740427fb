import json
import logging
from pathlib import Path

import pytest
from docx import Document

from cli import layout
from cli.commands import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from cli.manifest import STATUS_COMPLETE, hash_artifacts, load_manifest, validate_manifest, write_manifest
from cli.runner import check_run, run_pipeline
from confidence.persistence import load_gmm, read_decisions
from ingest.records import ABSTAIN, BACKGROUND
from metrics.sweep import read_sweep
from utils.config import load_config
from utils.errors import ConfigurationError, DataError
from utils.hashing import stage_key
from utils.logging_setup import LOG_LEVEL_ENV, resolve_log_level

SMALL_RUN = """
[run]
seed = 5
out_dir = "run"
pipelines = ["softmax", "gmm"]

[data]
source = "synth"
sessions_per_class = 3
flows_per_session = 5
test_fraction = 0.34

[encoder]
lstm1_units = 8
lstm2_units = 4
dense_units = 8
dropout = 0.0
epochs = 1
batch_size = 32

[gmm]
report_percentile = 5.0

[softmax]
report_threshold = 0.5
"""


def _write_config(tmp_path, text=SMALL_RUN, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# =============================================================================
# EXIT CODES
# =============================================================================

def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == EXIT_USAGE


def test_missing_config_is_a_usage_error(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE


def test_validating_a_directory_without_manifest_is_a_data_error(tmp_path):
    assert main(["validate-manifest", "--run-dir", str(tmp_path)]) == EXIT_DATA


def test_missing_rules_file_fails_before_any_stage(tmp_path):
    text = SMALL_RUN + '\n[labels]\nrules = "missing_rules.json"\n'
    config = _write_config(tmp_path, text)
    with pytest.raises(ConfigurationError):
        run_pipeline(config)
    assert not (tmp_path / "run").exists()
    assert main(["run", str(config)]) == EXIT_USAGE


def test_unknown_config_sections_are_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(_write_config(tmp_path, SMALL_RUN + "\n[extras]\nx = 1\n"))
    with pytest.raises(ConfigurationError):
        load_config(_write_config(tmp_path, SMALL_RUN.replace('"softmax", "gmm"', '"knn"')))


def test_gmm_ridge_mode_is_read_and_checked(tmp_path):
    fixed = SMALL_RUN.replace("report_percentile = 5.0", 'ridge_mode = "fixed"')
    assert load_config(_write_config(tmp_path, fixed)).gmm.ridge_mode == "fixed"
    assert load_config(_write_config(tmp_path)).gmm.ridge_mode == "prior"
    with pytest.raises(ConfigurationError):
        load_config(_write_config(tmp_path, SMALL_RUN.replace("report_percentile = 5.0", 'ridge_mode = "shrink"')))


# =============================================================================
# SUBCOMMAND CHAIN
# =============================================================================

def test_synthetic_embeddings_through_the_gmm_commands(tmp_path, capsys):
    common = ["--out-dir", str(tmp_path)]
    synth = ["synth", "embeddings", "--classes", "3", "--dim", "16", "--spread", "0.1"]
    assert main(["--seed", "3"] + common + synth + ["--n-per-class", "40", "--out", "train.csv"]) == EXIT_OK
    assert main(
        ["--seed", "4"] + common + synth + ["--n-per-class", "20", "--outlier-fraction", "0.5", "--out", "test.csv"]
    ) == EXIT_OK

    train, test = str(tmp_path / "train.csv"), str(tmp_path / "test.csv")
    model = str(tmp_path / "gmm.json")
    assert main(common + ["fit-gmm", "--embeddings", train, "--dim", "16", "--out", "gmm.json"]) == EXIT_OK
    assert main(["calibrate", "--model", model, "--percentile", "5", "--embeddings", train, "--dim", "16"]) == EXIT_OK
    assert "threshold" in capsys.readouterr().out
    assert load_gmm(tmp_path / "gmm.json").threshold is not None

    assert main(common + [
        "classify", "--model", model, "--embeddings", test, "--dim", "16", "--out", "decisions.csv",
    ]) == EXIT_OK
    labels, decisions = read_decisions(tmp_path / "decisions.csv")
    assert len(decisions) == 3 * 20 + 10
    outliers = [d for d, label in zip(decisions, labels) if label == BACKGROUND]
    assert sum(d.predicted == ABSTAIN for d in outliers) >= 9

    assert main(common + ["evaluate", "--decisions", str(tmp_path / "decisions.csv"), "--out", "eval.json"]) == EXIT_OK
    report = json.loads((tmp_path / "eval.json").read_text(encoding="utf-8"))
    assert 0.0 <= report["relevant_coverage"] <= 1.0
    assert (tmp_path / "eval_confusion.csv").exists()

    assert main(common + [
        "sweep", "--pipeline", "gmm", "--model", model, "--embeddings", test, "--dim", "16", "--out", "sweep.csv",
    ]) == EXIT_OK
    assert (tmp_path / "sweep.csv").exists()


def test_classify_needs_its_inputs(tmp_path):
    assert main(["classify", "--model", str(tmp_path / "gmm.json"), "--out", str(tmp_path / "d.csv")]) == EXIT_USAGE


# =============================================================================
# MANIFEST
# =============================================================================

def test_stage_key_tracks_params_and_input_contents(tmp_path):
    data = tmp_path / "input.txt"
    data.write_text("a", encoding="utf-8")
    first = stage_key("gmm", {"k": 3}, [data])
    assert stage_key("gmm", {"k": 3}, [data]) == first
    assert stage_key("gmm", {"k": 4}, [data]) != first
    assert stage_key("softmax", {"k": 3}, [data]) != first
    data.write_text("b", encoding="utf-8")
    assert stage_key("gmm", {"k": 3}, [data]) != first


def test_manifest_detects_tampered_and_missing_artifacts(tmp_path):
    (tmp_path / "a.csv").write_text("1\n", encoding="utf-8")
    (tmp_path / "b.csv").write_text("2\n", encoding="utf-8")
    stages = [{"name": "only", "key": "k1", "reused": False, "outputs": hash_artifacts(tmp_path, ["a.csv", "b.csv"])}]
    write_manifest(tmp_path, status=STATUS_COMPLETE, seed=1, config={}, config_path=None, stages=stages)
    assert load_manifest(tmp_path)["seed"] == 1
    assert validate_manifest(tmp_path, {"only": "k1"}) == []

    (tmp_path / "a.csv").write_text("changed\n", encoding="utf-8")
    (tmp_path / "b.csv").unlink()
    problems = validate_manifest(tmp_path, {"only": "k2"})
    assert "hash mismatch: a.csv" in problems
    assert "missing artifact: b.csv" in problems
    assert "stage key mismatch: only" in problems


def test_foreign_manifest_is_rejected(tmp_path):
    (tmp_path / "run_manifest.json").write_text('{"format": "other"}', encoding="utf-8")
    with pytest.raises(DataError):
        load_manifest(tmp_path)


def test_log_level_comes_from_the_flag_or_the_environment(monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "warning")
    assert resolve_log_level() == logging.WARNING
    assert resolve_log_level("debug") == logging.DEBUG
    with pytest.raises(ConfigurationError):
        resolve_log_level("chatty")
    assert main(["--log-level", "chatty", "validate-manifest"]) == EXIT_USAGE


# =============================================================================
# END TO END
# =============================================================================

@pytest.mark.slow
def test_runs_are_reproducible_and_checkable(tmp_path):
    config = _write_config(tmp_path)
    first = run_pipeline(config, out_dir=str(tmp_path / "first"))
    second = run_pipeline(config, out_dir=str(tmp_path / "second"))

    for pipeline in ("softmax", "gmm"):
        rel = layout.decisions(pipeline)
        assert (first.run_dir / rel).read_bytes() == (second.run_dir / rel).read_bytes()
    assert check_run(first.run_dir) == []

    summary = json.loads((first.run_dir / layout.SUMMARY).read_text(encoding="utf-8"))
    assert set(summary["pipelines"]) == {"softmax", "gmm"}
    report = Document(str(first.run_dir / layout.REPORT))
    assert report.tables

    rerun = run_pipeline(config, out_dir=str(tmp_path / "first"))
    assert "gmm" in rerun.reused and "softmax" in rerun.reused

    target = first.run_dir / layout.decisions("gmm")
    target.write_bytes(target.read_bytes() + b"\n")
    assert any(p.startswith("hash mismatch") for p in check_run(first.run_dir))
    assert main(["validate-manifest", "--run-dir", str(first.run_dir)]) == EXIT_DATA


SYNTH_SMALL = Path(__file__).parent.parent / "configs" / "synth_small.toml"


@pytest.mark.slow
def test_bundled_synth_run_favours_the_gmm(tmp_path):
    result = run_pipeline(SYNTH_SMALL, out_dir=str(tmp_path / "synth_small"))
    rows = {row.threshold: row for row in read_sweep(result.run_dir / layout.sweep("gmm"))}
    assert rows[5.0].macro_f1 > rows[0.0].macro_f1

    summary = json.loads((result.run_dir / layout.SUMMARY).read_text(encoding="utf-8"))
    report_threshold = load_config(SYNTH_SMALL).softmax.report_threshold
    matched = {row["baseline_threshold"]: row for row in summary["matched_f1"]}
    at_report = matched[report_threshold]
    assert at_report["primary_relevant_coverage"] is not None
    assert at_report["primary_relevant_coverage"] >= at_report["baseline_relevant_coverage"]
