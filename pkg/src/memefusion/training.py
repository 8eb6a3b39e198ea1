"""Optimization loop: class-weighted cross entropy, early stopping on validation loss."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from . import data as dat
from .errors import TrainingError
from .evaluation import macro_f1
from .models import Batch, MemeClassifier, mtl_loss

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    optimizer: str = "adam"              # "adam" | "sgd"
    learning_rate: "float | None" = None  # None -> 1e-3 (adam) / 3e-4 (sgd)
    imbalance: str = "class_weights"     # "class_weights" | "oversample" | "none"
    patience: int = 3
    min_delta: float = 0.0
    max_epochs: int = 50
    seed: int = 0
    task_weights: "tuple | None" = None  # per-task loss weights, default equal

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.imbalance not in ("class_weights", "oversample", "none"):
            raise ValueError(f"unknown imbalance strategy {self.imbalance!r}")

    @property
    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.optimizer == "adam" else 3e-4


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # one record per epoch
    stop_epoch: int = 0
    stop_reason: str = ""
    best_epoch: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.epochs)

    def write_jsonl(self, path: "str | os.PathLike") -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())


def weighted_cross_entropy(probs, labels, class_weights=None):
    """Mean over the batch of -w[y_i] * ln(p_i[y_i]), probabilities floored at 1e-12."""
    if not isinstance(probs, torch.Tensor):
        probs = torch.as_tensor(np.asarray(probs, dtype=np.float64))
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long, device=probs.device) \
        if not isinstance(labels, torch.Tensor) else labels
    k = probs.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    picked = probs.gather(1, labels.unsqueeze(1)).squeeze(1)
    nll = -torch.log(picked.clamp_min(PROB_FLOOR))
    if class_weights is not None:
        if isinstance(class_weights, Mapping):
            class_weights = [class_weights[c] for c in range(k)]
        w = torch.as_tensor(np.asarray(class_weights, dtype=np.float64),
                            dtype=probs.dtype, device=probs.device)
        nll = nll * w[labels]
    return nll.mean()


class EarlyStopping:
    """Stops after `patience` consecutive epochs without improving by min_delta."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True when training should stop."""
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _class_weight_tensors(batch: Batch, task_names, task_classes) -> dict:
    weights = {}
    for name in task_names:
        k = task_classes[name]
        labels = batch.labels[name].numpy()
        counts = {c: int(np.sum(labels == c)) for c in range(k)}
        wmap = dat.compute_class_weights(counts)
        weights[name] = torch.tensor([wmap[c] for c in range(k)], dtype=torch.float64)
    return weights


def _oversampled_indices(batch: Batch, task: str, rng: np.random.Generator) -> np.ndarray:
    """Index stream with every class of `task` topped up to the majority count."""
    labels = batch.labels[task].numpy()
    classes, counts = np.unique(labels, return_counts=True)
    majority = counts.max()
    out = [np.arange(len(labels))]
    for c, n_c in zip(classes, counts):
        deficit = int(majority - n_c)
        if deficit:
            pool = np.flatnonzero(labels == c)
            out.append(rng.choice(pool, size=deficit, replace=True))
    return np.concatenate(out)


def train(model: MemeClassifier, train_data: Batch, val_data: Batch,
          config: TrainConfig) -> tuple[MemeClassifier, TrainHistory]:
    """Fit until validation loss stops improving; returns the best-epoch weights.

    Shuffling, oversampling and dropout are all seeded by config.seed, so the
    same call twice yields an identical TrainHistory and identical weights.
    """
    if len(train_data) == 0:
        raise TrainingError("empty training set")
    if len(val_data) == 0:
        raise TrainingError("empty validation set")
    spec = model.spec
    task_classes = dict(spec.tasks)
    missing = [t for t in spec.task_names if t not in train_data.labels]
    if missing:
        raise TrainingError(f"training batch lacks labels for tasks {missing}")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    class_weights = None
    stream_indices = np.arange(len(train_data))
    if config.imbalance == "class_weights":
        class_weights = _class_weight_tensors(train_data, spec.task_names, task_classes)
    elif config.imbalance == "oversample":
        stream_indices = _oversampled_indices(train_data, spec.task_names[0], rng)

    lr = config.resolved_learning_rate
    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=lr,
                                     betas=(0.9, 0.999), eps=1e-8)
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=lr)

    task_w = list(config.task_weights) if config.task_weights is not None else None
    stopper = EarlyStopping(config.patience, config.min_delta)
    history = TrainHistory()
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(len(stream_indices))
        total_loss = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            sub = train_data.subset(stream_indices[order[start:start + config.batch_size]])
            probs = model(sub)
            losses = [
                weighted_cross_entropy(
                    probs[i], sub.labels[name],
                    class_weights[name] if class_weights else None)
                for i, name in enumerate(spec.task_names)
            ]
            loss = mtl_loss(losses, task_w)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.detach().item() * len(sub)
        train_loss = total_loss / len(stream_indices)

        val_loss, val_f1 = _validate(model, val_data, spec, task_classes, task_w)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.epochs.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_macro_f1": val_f1,
        })
        improved = val_loss < stopper.best_loss - stopper.min_delta
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if stop:
            history.stop_reason = "early_stopping"
            break
    else:
        history.stop_reason = "max_epochs"

    history.stop_epoch = epoch
    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def _validate(model, val_data, spec, task_classes, task_w):
    model.eval()
    with torch.no_grad():
        probs = model(val_data)
        losses = [weighted_cross_entropy(probs[i], val_data.labels[name])
                  for i, name in enumerate(spec.task_names)]
        val_loss = float(mtl_loss(losses, task_w))
        f1 = {}
        for i, name in enumerate(spec.task_names):
            pred = probs[i].numpy().argmax(axis=1)
            f1[name] = macro_f1(val_data.labels[name].numpy(), pred, task_classes[name])
    return val_loss, f1


def predict(model: MemeClassifier, data: Batch, batch_size: int = 256):
    """Inference-mode probabilities and argmax classes (ties go to the lower index)."""
    model.eval()
    chunks: list[list[np.ndarray]] = [[] for _ in model.spec.task_names]
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            sub = data.subset(np.arange(start, min(start + batch_size, len(data))))
            for i, p in enumerate(model(sub)):
                chunks[i].append(p.numpy())
    probs = {name: np.concatenate(chunks[i]) if chunks[i] else np.zeros((0, k))
             for i, (name, k) in enumerate(model.spec.tasks)}
    classes = {name: p.argmax(axis=1) for name, p in probs.items()}
    return probs, classes
