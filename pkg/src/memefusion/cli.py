"""Config-driven entry points: prepare, train, predict, evaluate, report.

Every artifact lands under the config's output directory and is a
deterministic function of (config, seeds, input data), so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import data as dat
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, spec_from_dict, spec_to_dict
from .errors import ConfigError, DataError, EvaluationError, MemeFusionError
from .evaluation import (RunResult, load_predictions, macro_f1, report_table,
                         task_score, write_predictions, write_report)
from .fusion import late_fuse
from .models import build_model, encode_batch
from .text import Vocab, build_vocab, preprocess_text
from .training import predict as run_inference
from .training import train as run_training


class RunPaths:
    def __init__(self, out_dir: str):
        self.out = out_dir
        self.prepared = os.path.join(out_dir, "prepared")
        self.images_dir = os.path.join(self.prepared, "images")
        self.train_manifest = os.path.join(self.prepared, "train.csv")
        self.val_manifest = os.path.join(self.prepared, "val.csv")
        self.vocab = os.path.join(self.prepared, "vocab.json")
        self.distribution_json = os.path.join(self.prepared, "distribution.json")
        self.distribution_txt = os.path.join(self.prepared, "distribution.txt")
        self.checkpoint = os.path.join(out_dir, "checkpoint.zip")
        self.history = os.path.join(out_dir, "history.jsonl")
        self.metadata = os.path.join(out_dir, "metadata.json")
        self.predictions = os.path.join(out_dir, "predictions.csv")
        self.probabilities = os.path.join(out_dir, "probabilities.zip")
        self.scores = os.path.join(out_dir, "scores.json")
        self.report_prefix = os.path.join(out_dir, "report")

    def run_artifacts(self):
        return [self.checkpoint, self.history, self.metadata, self.predictions,
                self.probabilities, self.scores, self.report_prefix + ".txt",
                self.report_prefix + ".csv", self.report_prefix + ".json"]


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

_DIST_TASKS = [("Sentiment", "sentiment"), ("Humor", "humor_scale"),
               ("Sarcasm", "sarcasm_scale"), ("Offence", "offence_scale"),
               ("Motivation", "motivation")]


def _distribution_payload(train, validation):
    payload = {}
    for split_name, samples in (("train", train), ("validation", validation)):
        payload[split_name] = {
            label: {str(c): n for c, n in dat.class_distribution(samples, task).counts.items()}
            for label, task in _DIST_TASKS
        }
    return payload


def _distribution_text(payload):
    classes = range(4)
    lines = [
        f"{'Label':<12}{'Train':>16}{'':>12}  {'Validation':>16}",
        f"{'':<12}" + "".join(f"{c:>7}" for c in classes)
        + "  " + "".join(f"{c:>7}" for c in classes),
    ]
    for label, _ in _DIST_TASKS:
        row = f"{label:<12}"
        for split_name in ("train", "validation"):
            counts = payload[split_name][label]
            row += "".join(f"{counts.get(str(c), '-'):>7}" for c in classes)
            if split_name == "train":
                row += "  "
        lines.append(row)
    return "\n".join(lines) + "\n"


def _load_dataset(config: ExperimentConfig):
    synthetic = config.synthetic_spec()
    if synthetic is not None:
        spec, n, seed = synthetic
        return dat.generate_synthetic(n, spec, seed)
    manifest = config.raw["dataset"]["manifest"]
    samples = dat.load_manifest(manifest)
    dat.resolve_image_paths(samples, os.path.dirname(os.path.abspath(manifest)))
    for s in samples:
        if isinstance(s.image_ref, str) and not os.path.isfile(s.image_ref):
            raise DataError(f"image file missing for sample {s.id!r}: {s.image_ref}")
    return samples


def run_prepare(config: ExperimentConfig) -> dict:
    """Split the dataset, build the vocabulary, report label distributions."""
    paths = RunPaths(config.output_dir)
    os.makedirs(paths.prepared, exist_ok=True)
    dataset = _load_dataset(config)
    split = dat.split_train_val(dataset, config.raw["split"]["val_fraction"],
                                seed=config.section_seed("split"),
                                stratify=config.raw["split"]["stratify"])
    dat.write_manifest(split.train, paths.train_manifest, images_dir=paths.images_dir)
    dat.write_manifest(split.validation, paths.val_manifest, images_dir=paths.images_dir)
    vocab = build_vocab([preprocess_text(s.text) for s in split.train],
                        min_count=config.raw["text"]["min_count"],
                        max_size=config.raw["text"]["max_vocab"])
    with open(paths.vocab, "w", encoding="utf-8") as f:
        f.write(vocab.to_json() + "\n")
    payload = _distribution_payload(split.train, split.validation)
    _write_json(paths.distribution_json, payload)
    with open(paths.distribution_txt, "w", encoding="utf-8") as f:
        f.write(_distribution_text(payload))
    return {"train": paths.train_manifest, "val": paths.val_manifest,
            "vocab": paths.vocab, "distribution": paths.distribution_json,
            "train_size": len(split.train), "val_size": len(split.validation)}


def _require_prepared(paths: RunPaths):
    for p in (paths.train_manifest, paths.val_manifest, paths.vocab):
        if not os.path.isfile(p):
            raise ConfigError(
                f"prepared artifact missing: {p} (run the 'prepare' subcommand first)"
            )


def _load_vocab(paths: RunPaths) -> Vocab:
    with open(paths.vocab, encoding="utf-8") as f:
        return Vocab.from_json(f.read())


def _load_split(manifest_path: str):
    samples = dat.load_manifest(manifest_path)
    return dat.resolve_image_paths(samples, os.path.dirname(os.path.abspath(manifest_path)))


# ---------------------------------------------------------------------------
# experiment (train -> predict -> evaluate -> report)
# ---------------------------------------------------------------------------

def _describe_model(config: ExperimentConfig):
    m = config.raw["model"]
    if config.fusion == "late":
        return "late-fusion", "Text & Image", "Late Fusion"
    parts = [m["text_encoder"], m["image_encoder"]]
    name = "+".join(p for p in parts if p)
    if m["text_encoder"] and m["image_encoder"]:
        modality = "Text & Image"
        fusion_label = {"early": "Early Fusion", "gmu": "GMU"}[m["fusion"]]
    else:
        modality = "Text" if m["text_encoder"] else "Image"
        fusion_label = "-"
    return name, modality, fusion_label


def _compute_scores(pred_table, gold):
    subtask_f1 = {}
    for name, preds in pred_table.items():
        missing = [s.id for s in gold if s.id not in preds]
        if missing:
            raise EvaluationError(f"subtask {name!r}: no prediction for ids {missing[:5]}")
        y_true = [dat.task_label(s, name) for s in gold]
        y_pred = [preds[s.id] for s in gold]
        subtask_f1[name] = macro_f1(y_true, y_pred, dat.SUBTASKS[name].num_classes)
    task_scores = {}
    for group, members in dat.TASK_GROUPS.items():
        if all(m in pred_table for m in members):
            ts = task_score(group, pred_table, gold)
            task_scores[group] = {"aggregate": ts.aggregate,
                                  "subtasks": ts.subtask_scores}
    return {"subtask_macro_f1": subtask_f1, "task_scores": task_scores}


def _write_run_outputs(paths, config, ids, probs, classes, gold, extra_metadata):
    task_names = list(probs)
    write_predictions(paths.predictions, ids, {t: classes[t] for t in task_names})
    arrays = {t: probs[t] for t in task_names}
    arrays["ids"] = np.asarray(ids)
    save_checkpoint(paths.probabilities, arrays)
    pred_table = {t: {i: int(c) for i, c in zip(ids, classes[t])} for t in task_names}
    scores = _compute_scores(pred_table, gold)
    _write_json(paths.scores, scores)
    name, modality, fusion_label = _describe_model(config)
    run_scores = {g: v["aggregate"] for g, v in scores["task_scores"].items()}
    report = report_table([RunResult(name, modality, fusion_label, run_scores)])
    write_report(report, paths.report_prefix)
    metadata = {
        "toolkit_version": __version__,
        "config_sha256": config.config_hash(),
        "config": config.raw,
        "model": {"name": name, "modality": modality, "fusion": fusion_label},
        "seeds": {"master": config.seed, "split": config.section_seed("split"),
                  "train": config.section_seed("train")},
    }
    metadata.update(extra_metadata)
    _write_json(paths.metadata, metadata)
    return scores


def _run_trainable_experiment(config: ExperimentConfig, paths: RunPaths):
    train_samples = _load_split(paths.train_manifest)
    val_samples = _load_split(paths.val_manifest)
    vocab = _load_vocab(paths)
    spec = config.model_spec(vocab_size=len(vocab))
    model = build_model(spec, seed=config.seed)
    train_batch = encode_batch(train_samples, spec, vocab)
    val_batch = encode_batch(val_samples, spec, vocab)
    model, history = run_training(model, train_batch, val_batch, config.train_config())
    save_checkpoint(paths.checkpoint, model.state_dict())
    history.write_jsonl(paths.history)
    probs, classes = run_inference(model, val_batch)
    extra = {
        "model_spec": spec_to_dict(spec),
        "parameter_count": sum(p.numel() for p in model.parameters()),
        "data": {"train_size": len(train_samples), "val_size": len(val_samples),
                 "vocab_size": len(vocab)},
        "training": {"stop_epoch": history.stop_epoch,
                     "stop_reason": history.stop_reason,
                     "best_epoch": history.best_epoch},
    }
    return _write_run_outputs(paths, config, [s.id for s in val_samples],
                              probs, classes, val_samples, extra)


def _load_probabilities(run_dir: str):
    path = os.path.join(run_dir, "probabilities.zip")
    if not os.path.isfile(path):
        raise EvaluationError(f"run directory {run_dir!r} has no probabilities.zip")
    arrays = load_checkpoint(path)
    ids = [str(i) for i in arrays.pop("ids")]
    return ids, arrays


def _run_late_fusion(config: ExperimentConfig, paths: RunPaths):
    runs = config.raw["late_fusion"]["runs"]
    weights = config.raw["late_fusion"]["weights"]
    loaded = [_load_probabilities(r) for r in runs]
    ids = loaded[0][0]
    tasks = sorted(loaded[0][1])
    for run_dir, (run_ids, arrays) in zip(runs, loaded):
        if run_ids != ids:
            raise EvaluationError(f"run {run_dir!r} predicts different sample ids")
        if sorted(arrays) != tasks:
            raise EvaluationError(f"run {run_dir!r} predicts different tasks")
    probs = {t: late_fuse([arrays[t] for _, arrays in loaded], weights=weights)
             for t in tasks}
    classes = {t: p.argmax(axis=1) for t, p in probs.items()}
    val_samples = _load_split(paths.val_manifest)
    if [s.id for s in val_samples] != ids:
        raise EvaluationError(
            "late-fusion runs were predicted on a different validation split"
        )
    extra = {"late_fusion": {"runs": list(runs), "weights": weights}}
    return _write_run_outputs(paths, config, ids, probs, classes, val_samples, extra)


def run_experiment(config: ExperimentConfig) -> dict:
    """Full pipeline on prepared artifacts; partial outputs are removed on failure."""
    paths = RunPaths(config.output_dir)
    _require_prepared(paths)
    os.makedirs(paths.out, exist_ok=True)
    try:
        if config.fusion == "late":
            return _run_late_fusion(config, paths)
        return _run_trainable_experiment(config, paths)
    except BaseException:
        for artifact in paths.run_artifacts():
            if os.path.isfile(artifact):
                os.unlink(artifact)
        raise


# ---------------------------------------------------------------------------
# standalone predict / evaluate / report
# ---------------------------------------------------------------------------

def run_predict(config: ExperimentConfig) -> dict:
    """Re-run inference from an existing checkpoint onto the validation split."""
    paths = RunPaths(config.output_dir)
    _require_prepared(paths)
    if config.fusion == "late":
        return _run_late_fusion(config, paths)
    if not os.path.isfile(paths.metadata) or not os.path.isfile(paths.checkpoint):
        raise ConfigError("no trained run in output_dir (run 'train' first)")
    with open(paths.metadata, encoding="utf-8") as f:
        metadata = json.load(f)
    spec = spec_from_dict(metadata["model_spec"])
    model = build_model(spec, seed=config.seed)
    apply_checkpoint(model, paths.checkpoint)
    vocab = _load_vocab(paths)
    val_samples = _load_split(paths.val_manifest)
    batch = encode_batch(val_samples, spec, vocab, with_labels=False)
    probs, classes = run_inference(model, batch)
    ids = [s.id for s in val_samples]
    write_predictions(paths.predictions, ids, classes)
    arrays = dict(probs)
    arrays["ids"] = np.asarray(ids)
    save_checkpoint(paths.probabilities, arrays)
    return {"predictions": paths.predictions, "probabilities": paths.probabilities}


def run_evaluate(config: ExperimentConfig) -> dict:
    """Score an existing prediction file against the validation gold labels."""
    paths = RunPaths(config.output_dir)
    _require_prepared(paths)
    ids, pred_table = load_predictions(paths.predictions)
    gold = _load_split(paths.val_manifest)
    scores = _compute_scores(pred_table, gold)
    _write_json(paths.scores, scores)
    return scores


def _run_result_from_dir(run_dir: str) -> RunResult:
    meta_path = os.path.join(run_dir, "metadata.json")
    scores_path = os.path.join(run_dir, "scores.json")
    for p in (meta_path, scores_path):
        if not os.path.isfile(p):
            raise EvaluationError(f"run directory {run_dir!r} is missing {os.path.basename(p)}")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    with open(scores_path, encoding="utf-8") as f:
        scores = json.load(f)
    info = meta.get("model", {})
    return RunResult(info.get("name", run_dir), info.get("modality", "-"),
                     info.get("fusion", "-"),
                     {g: v["aggregate"] for g, v in scores["task_scores"].items()})


def run_report(config: ExperimentConfig) -> dict:
    """Aggregate one or more finished runs into a comparison table."""
    run_dirs = config.raw["report"]["runs"] or [config.output_dir]
    rows = [_run_result_from_dir(d) for d in run_dirs]
    paths = RunPaths(config.output_dir)
    os.makedirs(paths.out, exist_ok=True)
    report = report_table(rows)
    write_report(report, paths.report_prefix)
    return report


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="memefusion",
        description="Multimodal meme sentiment/humor classification experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("prepare", "split the dataset, build vocab, report label distributions"),
        ("train", "run the full experiment: train, predict, evaluate, report"),
        ("predict", "write predictions from an existing checkpoint"),
        ("evaluate", "score an existing prediction file"),
        ("report", "aggregate finished runs into a comparison table"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
    return parser


_COMMANDS = {
    "prepare": run_prepare,
    "train": run_experiment,
    "predict": run_predict,
    "evaluate": run_evaluate,
    "report": run_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.raw["seed"] = args.seed
        if args.out is not None:
            config.raw["output_dir"] = args.out
        result = _COMMANDS[args.command](config)
    except MemeFusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return type(e).exit_code
    if args.command == "report" and isinstance(result, dict) and "text" in result:
        print(result["text"], end="")
    else:
        print(f"{args.command}: done (outputs under {config.output_dir})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
