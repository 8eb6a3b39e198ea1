import json
import os

import numpy as np
import pytest
import yaml

from conftest import TABLE1, table1_samples
from memefusion.checkpoint import load_checkpoint
from memefusion.cli import (_distribution_payload, main, run_experiment,
                            run_prepare)
from memefusion.config import load_config, resolve_config
from memefusion.data import load_manifest, write_manifest
from memefusion.errors import ConfigError


def base_config(out_dir, **overrides):
    cfg = {
        "output_dir": str(out_dir),
        "seed": 5,
        "dataset": {"synthetic": {"n": 36, "seed": 9, "image_size": 12,
                                  "signals": {"sentiment": {"mode": "both"}}}},
        "split": {"val_fraction": 0.25, "seed": 3},
        "text": {"max_len": 10, "embedding_dim": 8, "lstm_units": 4,
                 "dropout": 0.1, "recurrent_dropout": 0.0},
        "image": {"input_size": 12, "conv_filters": [4], "kernel_sizes": [3],
                  "strides": [1], "paddings": [1], "pool_after": [0],
                  "dense_sizes": [8], "dropout": 0.1},
        "model": {"tasks": ["sentiment"], "modality_dim": 6, "head_hidden": 8},
        "train": {"batch_size": 8, "max_epochs": 2, "patience": 3, "seed": 7},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return cfg


def write_config(tmp_path, cfg, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_bytes(*paths):
    return [open(p, "rb").read() for p in paths]


# -- config loading -----------------------------------------------------------

def test_config_defaults_and_validation(tmp_path):
    cfg = load_config(write_config(tmp_path, base_config(tmp_path / "out")))
    assert cfg.raw["train"]["optimizer"] == "adam"
    assert cfg.section_seed("split") == 3
    assert cfg.section_seed("train") == 7
    assert len(cfg.config_hash()) == 64


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("output_dir: [unclosed")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    with pytest.raises(ConfigError, match="unknown top-level"):
        resolve_config({"output_dir": "x", "dataset": {"synthetic": {}}, "extras": 1})
    with pytest.raises(ConfigError, match="unknown keys in config section"):
        resolve_config({"output_dir": "x", "dataset": {"synthetic": {}},
                        "train": {"lr": 1.0}})
    with pytest.raises(ConfigError, match="exactly one of"):
        resolve_config({"output_dir": "x", "dataset": {}})
    with pytest.raises(ConfigError, match="must set output_dir"):
        resolve_config({"dataset": {"synthetic": {}}})
    with pytest.raises(ConfigError, match="invalid configuration"):
        resolve_config({"output_dir": "x", "dataset": {"synthetic": {}},
                        "train": {"optimizer": "rmsprop"}})
    with pytest.raises(ConfigError, match="at least two"):
        resolve_config({"output_dir": "x", "dataset": {"synthetic": {}},
                        "model": {"fusion": "late"}})


def test_master_seed_fallback(tmp_path):
    cfg = resolve_config({"output_dir": "x", "seed": 41,
                          "dataset": {"synthetic": {}}})
    assert cfg.section_seed("split") == 41
    assert cfg.section_seed("train") == 41


# -- prepare ------------------------------------------------------------------

def test_distribution_payload_matches_published_table(table1_train, table1_val):
    payload = _distribution_payload(table1_train, table1_val)
    assert payload["train"]["Sentiment"] == {"0": 519, "1": 1894, "2": 3530}
    assert payload["train"]["Offence"] == {"0": 2289, "1": 2203, "2": 1259, "3": 192}
    assert payload["validation"]["Motivation"] == {"0": 681, "1": 368}
    assert payload["validation"]["Humor"] == {"0": 251, "1": 392, "2": 286, "3": 120}


def test_prepare_on_published_corpus_conserves_counts(tmp_path, table1_train, table1_val):
    manifest = tmp_path / "full.csv"
    write_manifest(table1_train + table1_val, manifest)
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path, base_config(
        out, dataset={"manifest": str(manifest), "synthetic": None},
        split={"val_fraction": 0.15, "seed": 3}))
    result = run_prepare(load_config(cfg_path))
    assert result["val_size"] == 1049 and result["train_size"] == 5943
    payload = json.loads((out / "prepared" / "distribution.json").read_text())
    for label, task_counts in TABLE1["train"].items():
        pretty = label.capitalize()
        total = {str(c): t + v for c, (t, v) in
                 enumerate(zip(task_counts, TABLE1["val"][label]))}
        combined = {
            c: payload["train"][pretty].get(c, 0) + payload["validation"][pretty].get(c, 0)
            for c in total
        }
        assert combined == total
    # stratified on sentiment: validation marginal within 1 of proportional
    for c, count in enumerate([519 + 112, 1894 + 307, 3530 + 630]):
        assert abs(payload["validation"]["Sentiment"][str(c)] - 0.15 * count) <= 1.0


def test_prepare_rerun_byte_identical(tmp_path):
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path, base_config(out))
    assert main(["prepare", "--config", cfg_path]) == 0
    prepared = out / "prepared"
    first = {p.name: p.read_bytes() for p in prepared.iterdir() if p.is_file()}
    assert main(["prepare", "--config", cfg_path]) == 0
    second = {p.name: p.read_bytes() for p in prepared.iterdir() if p.is_file()}
    assert first == second
    assert set(first) == {"train.csv", "val.csv", "vocab.json",
                          "distribution.json", "distribution.txt"}


def test_prepare_materializes_synthetic_images(tmp_path):
    out = tmp_path / "out"
    run_prepare(load_config(write_config(tmp_path, base_config(out))))
    train = load_manifest(out / "prepared" / "train.csv")
    ref = train[0].image_ref
    assert ref and not os.path.isabs(ref)
    assert os.path.isfile(out / "prepared" / ref)


def test_prepare_missing_image_exit_code(tmp_path, capsys):
    samples = table1_samples("val")[:4]
    for s in samples:
        s.image_ref = "ghost/does-not-exist.png"
    manifest = tmp_path / "m.csv"
    write_manifest(samples, manifest)
    cfg_path = write_config(tmp_path, base_config(
        tmp_path / "out", dataset={"manifest": str(manifest), "synthetic": None}))
    code = main(["prepare", "--config", cfg_path])
    assert code == 3
    err = capsys.readouterr().err
    assert "val00000" in err and "image file missing" in err


# -- full experiment ----------------------------------------------------------

def run_full(tmp_path, out_name="run", **overrides):
    out = tmp_path / out_name
    cfg_path = write_config(tmp_path, base_config(out, **overrides),
                            name=f"{out_name}.yaml")
    assert main(["prepare", "--config", cfg_path]) == 0
    assert main(["train", "--config", cfg_path]) == 0
    return out, cfg_path


def test_experiment_produces_artifacts(tmp_path):
    out, _ = run_full(tmp_path)
    for name in ("checkpoint.zip", "history.jsonl", "metadata.json",
                 "predictions.csv", "probabilities.zip", "scores.json",
                 "report.txt", "report.csv", "report.json"):
        assert (out / name).is_file(), name
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["toolkit_version"]
    assert metadata["config_sha256"] == load_config(
        write_config(tmp_path, base_config(out), name="again.yaml")).config_hash()
    scores = json.loads((out / "scores.json").read_text())
    assert "A" in scores["task_scores"]
    history_lines = (out / "history.jsonl").read_text().strip().split("\n")
    assert len(history_lines) == metadata["training"]["stop_epoch"]


def test_experiment_rerun_byte_identical(tmp_path):
    out_a, _ = run_full(tmp_path, "runa")
    out_b, _ = run_full(tmp_path, "runb")
    # same config content except output_dir; compare the deterministic artifacts
    for name in ("predictions.csv", "history.jsonl", "probabilities.zip",
                 "checkpoint.zip", "scores.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_seed_override_changes_predictions(tmp_path):
    out, cfg_path = run_full(tmp_path)
    baseline = (out / "probabilities.zip").read_bytes()
    assert main(["train", "--config", cfg_path, "--seed", "99"]) == 0
    assert (out / "probabilities.zip").read_bytes() != baseline


def test_train_requires_prepare(tmp_path):
    cfg_path = write_config(tmp_path, base_config(tmp_path / "fresh"))
    assert main(["train", "--config", cfg_path]) == 2


def test_experiment_writes_only_inside_output_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "sandboxed"
    cfg_path = write_config(tmp_path, base_config(out))
    before = {str(p) for p in tmp_path.rglob("*")}
    assert main(["prepare", "--config", cfg_path]) == 0
    assert main(["train", "--config", cfg_path]) == 0
    created = {str(p) for p in tmp_path.rglob("*")} - before
    assert created
    assert all(p.startswith(str(out)) for p in created), sorted(created)[:5]


def test_failed_experiment_cleans_partial_outputs(tmp_path):
    out = tmp_path / "out"
    cfg = base_config(out)
    cfg_path = write_config(tmp_path, cfg)
    assert main(["prepare", "--config", cfg_path]) == 0
    # poison the vocabulary so training setup fails after prepare
    (out / "prepared" / "vocab.json").write_text('{"a": 7}')
    assert main(["train", "--config", cfg_path]) != 0
    leftovers = {p.name for p in out.iterdir() if p.is_file()}
    assert leftovers == set()


def test_predict_standalone_matches_experiment(tmp_path):
    out, cfg_path = run_full(tmp_path)
    experiment_preds = (out / "predictions.csv").read_bytes()
    experiment_probs = (out / "probabilities.zip").read_bytes()
    (out / "predictions.csv").unlink()
    (out / "probabilities.zip").unlink()
    assert main(["predict", "--config", cfg_path]) == 0
    assert (out / "predictions.csv").read_bytes() == experiment_preds
    assert (out / "probabilities.zip").read_bytes() == experiment_probs


def test_evaluate_standalone_matches_experiment(tmp_path):
    out, cfg_path = run_full(tmp_path)
    scores = json.loads((out / "scores.json").read_text())
    (out / "scores.json").unlink()
    assert main(["evaluate", "--config", cfg_path]) == 0
    assert json.loads((out / "scores.json").read_text()) == scores


def test_error_category_exit_codes(tmp_path, capsys):
    out = tmp_path / "codes"
    cfg_path = write_config(tmp_path, base_config(out))
    assert main(["prepare", "--config", cfg_path]) == 0
    # no predictions.csv yet: evaluation error category
    assert main(["evaluate", "--config", cfg_path]) == 6
    assert main(["prepare", "--config", str(tmp_path / "missing.yaml")]) == 2
    capsys.readouterr()


# -- late fusion ---------------------------------------------------------------

def test_late_fusion_is_probability_average(tmp_path, capsys):
    out_a, _ = run_full(tmp_path, "ma", train={"seed": 7})
    out_b, _ = run_full(tmp_path, "mb", train={"seed": 8})
    out_c = tmp_path / "late"
    late_cfg = base_config(out_c, model={"fusion": "late"},
                           late_fusion={"runs": [str(out_a), str(out_b)]})
    cfg_path = write_config(tmp_path, late_cfg, name="late.yaml")
    assert main(["prepare", "--config", cfg_path]) == 0
    assert main(["train", "--config", cfg_path]) == 0
    probs_a = load_checkpoint(out_a / "probabilities.zip")["sentiment"]
    probs_b = load_checkpoint(out_b / "probabilities.zip")["sentiment"]
    fused = load_checkpoint(out_c / "probabilities.zip")["sentiment"]
    np.testing.assert_allclose(fused, (probs_a + probs_b) / 2, atol=1e-12)
    preds = (out_c / "predictions.csv").read_text().strip().split("\n")[1:]
    classes = np.array([int(line.split(",")[1]) for line in preds])
    np.testing.assert_array_equal(classes, ((probs_a + probs_b) / 2).argmax(axis=1))
    meta = json.loads((out_c / "metadata.json").read_text())
    assert meta["model"]["fusion"] == "Late Fusion"


def test_report_aggregates_runs(tmp_path, capsys):
    out_a, _ = run_full(tmp_path, "ra", train={"seed": 7})
    out_b, _ = run_full(tmp_path, "rb", model={"image_encoder": None})
    out_r = tmp_path / "reportdir"
    cfg = base_config(out_r, report={"runs": [str(out_a), str(out_b)]})
    cfg_path = write_config(tmp_path, cfg, name="report.yaml")
    assert main(["report", "--config", cfg_path]) == 0
    text = (out_r / "report.txt").read_text()
    assert "Baseline" in text and "bilstm+alexnet" in text and "bilstm" in text
    shown = capsys.readouterr().out
    assert "Baseline" in shown
    rows = json.loads((out_r / "report.json").read_text())
    assert len(rows) == 3
    modalities = {r["model"]: r["modality"] for r in rows}
    assert modalities["bilstm"] == "Text"
