"""Experiment configuration: one YAML file fully describes a reproducible run."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass

import yaml

from .data import SUBTASKS, SignalSpec, SyntheticSpec
from .encoders import ImageEncoderConfig, TextEncoderConfig
from .errors import ConfigError
from .models import ModelSpec, task_pairs
from .training import TrainConfig

DEFAULTS = {
    "output_dir": None,
    "seed": 0,
    "dataset": {"manifest": None, "synthetic": None},
    "split": {"val_fraction": 0.15, "seed": None, "stratify": True},
    "text": {
        "max_len": 64, "min_count": 1, "max_vocab": None,
        "embedding_dim": 32, "lstm_units": 32, "dropout": 0.5,
        "recurrent_dropout": 0.2, "num_layers": 1,
    },
    "image": {
        "input_size": 224, "conv_filters": [96, 128, 128, 256, 256],
        "kernel_sizes": [11, 5, 3, 3, 3], "strides": [4, 1, 1, 1, 1],
        "paddings": [2, 2, 1, 1, 1], "pool_after": [0, 1, 4],
        "dense_sizes": [1024, 1024], "dropout": 0.4, "rescale": True,
    },
    "model": {
        "tasks": ["sentiment"], "text_encoder": "bilstm", "image_encoder": "alexnet",
        "fusion": "early", "modality_dim": 64, "gmu_dim": 256, "head_hidden": 128,
        "batch_norm_fusion": False, "adapter_policy": "frozen",
        "adapter_text_max_len": 199, "adapter_image_size": 256,
    },
    "train": {
        "batch_size": 32, "optimizer": "adam", "learning_rate": None,
        "imbalance": "class_weights", "patience": 3, "min_delta": 0.0,
        "max_epochs": 50, "seed": None, "task_weights": None,
    },
    "synthetic_defaults": {"n": 64, "seed": None, "image_size": 24,
                           "filler_tokens": 4, "background": "noise", "signals": {}},
    "late_fusion": {"runs": [], "weights": None},
    "report": {"runs": []},
}


def _merge_section(name, user, defaults):
    if user is None:
        return copy.deepcopy(defaults)
    if not isinstance(user, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(user)
    return merged


@dataclass
class ExperimentConfig:
    raw: dict
    source: str = "<dict>"

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def section_seed(self, section: str) -> int:
        value = self.raw[section]["seed"]
        return self.seed if value is None else value

    @property
    def fusion(self) -> str:
        return self.raw["model"]["fusion"]

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()

    def synthetic_spec(self):
        syn = self.raw["dataset"]["synthetic"]
        if syn is None:
            return None
        params = _merge_section("dataset.synthetic", syn, DEFAULTS["synthetic_defaults"])
        signals = {}
        for task, sig in (params["signals"] or {}).items():
            if task not in SUBTASKS:
                raise ConfigError(f"synthetic signal for unknown task {task!r}")
            sig = sig or {}
            unknown = set(sig) - {"mode", "prior"}
            if unknown:
                raise ConfigError(f"unknown synthetic signal keys for {task!r}: {sorted(unknown)}")
            prior = sig.get("prior")
            signals[task] = SignalSpec(mode=sig.get("mode", "none"),
                                       prior=tuple(prior) if prior else None)
        spec = SyntheticSpec(signals=signals, image_size=params["image_size"],
                             filler_tokens=params["filler_tokens"],
                             background=params["background"])
        seed = params["seed"] if params["seed"] is not None else self.seed
        return spec, params["n"], seed

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        section = {k: v for k, v in self.raw["text"].items()
                   if k not in ("min_count", "max_vocab")}
        return TextEncoderConfig(vocab_size=vocab_size, **section)

    def image_config(self) -> ImageEncoderConfig:
        section = dict(self.raw["image"])
        for key in ("conv_filters", "kernel_sizes", "strides", "paddings",
                    "pool_after", "dense_sizes"):
            section[key] = tuple(section[key])
        return ImageEncoderConfig(**section)

    def train_config(self) -> TrainConfig:
        section = dict(self.raw["train"])
        section["seed"] = self.section_seed("train")
        if section["task_weights"] is not None:
            section["task_weights"] = tuple(section["task_weights"])
        return TrainConfig(**section)

    def model_spec(self, vocab_size: int) -> ModelSpec:
        m = self.raw["model"]
        text_cfg = image_cfg = None
        if m["text_encoder"] == "bilstm":
            text_cfg = self.text_config(vocab_size)
        if m["image_encoder"] == "alexnet":
            image_cfg = self.image_config()
        fusion = m["fusion"] if m["fusion"] != "late" else "early"
        return ModelSpec(
            tasks=task_pairs(m["tasks"]),
            text_encoder=m["text_encoder"],
            image_encoder=m["image_encoder"],
            fusion=fusion,
            modality_dim=m["modality_dim"],
            gmu_dim=m["gmu_dim"],
            head_hidden=m["head_hidden"],
            batch_norm_fusion=m["batch_norm_fusion"],
            adapter_policy=m["adapter_policy"],
            text=text_cfg,
            image=image_cfg,
            adapter_text_max_len=m["adapter_text_max_len"],
            adapter_image_size=m["adapter_image_size"],
        )


def resolve_config(user: dict, source: str = "<dict>") -> ExperimentConfig:
    """Apply defaults, reject unknown keys, and sanity-check an experiment config."""
    if not isinstance(user, dict):
        raise ConfigError(f"{source}: config must be a mapping")
    unknown = set(user) - (set(DEFAULTS) - {"synthetic_defaults"})
    if unknown:
        raise ConfigError(f"{source}: unknown top-level config keys: {sorted(unknown)}")
    raw = {"output_dir": user.get("output_dir"), "seed": user.get("seed", 0)}
    for section in ("dataset", "split", "text", "image", "model", "train",
                    "late_fusion", "report"):
        raw[section] = _merge_section(section, user.get(section), DEFAULTS[section])
    if not raw["output_dir"]:
        raise ConfigError(f"{source}: config must set output_dir")
    ds = raw["dataset"]
    if (ds["manifest"] is None) == (ds["synthetic"] is None):
        raise ConfigError(
            f"{source}: dataset must set exactly one of 'manifest' or 'synthetic'"
        )
    if not isinstance(raw["model"]["tasks"], list) or not raw["model"]["tasks"]:
        raise ConfigError(f"{source}: model.tasks must be a non-empty list")
    if not 0 < raw["split"]["val_fraction"] < 1:
        raise ConfigError(f"{source}: split.val_fraction must lie in (0, 1)")
    config = ExperimentConfig(raw=raw, source=source)
    try:
        config.train_config()
        if raw["model"]["fusion"] != "late":
            config.model_spec(vocab_size=2)
        if config.synthetic_spec() is not None:
            spec, n, _ = config.synthetic_spec()
            if n < 1:
                raise ValueError("synthetic.n must be >= 1")
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(f"{source}: invalid configuration: {e}") from e
    if raw["model"]["fusion"] == "late" and len(raw["late_fusion"]["runs"]) < 2:
        raise ConfigError(
            f"{source}: fusion 'late' needs late_fusion.runs listing at least two "
            "completed run directories"
        )
    return config


def load_config(path: "str | os.PathLike") -> ExperimentConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            user = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    return resolve_config(user or {}, source=path)


def spec_to_dict(spec: ModelSpec) -> dict:
    return asdict(spec)


def spec_from_dict(payload: dict) -> ModelSpec:
    payload = copy.deepcopy(payload)
    payload["tasks"] = tuple(tuple(pair) for pair in payload["tasks"])
    if payload.get("text"):
        payload["text"] = TextEncoderConfig(**payload["text"])
    if payload.get("image"):
        image = {k: tuple(v) if isinstance(v, list) else v
                 for k, v in payload["image"].items()}
        payload["image"] = ImageEncoderConfig(**image)
    return ModelSpec(**payload)
