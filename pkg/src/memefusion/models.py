"""Assemble classifiers from encoders, a fusion block, and per-task softmax heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import data as dat
from . import text as textpipe
from .encoders import (BiLstmTextEncoder, ConvImageEncoder, ImageEncoderConfig,
                       TextEncoderConfig, preprocess_image, pretrained_adapter)
from .errors import DataError, ModelBuildError

BUILTIN_TEXT_ENCODERS = ("bilstm",)
BUILTIN_IMAGE_ENCODERS = ("alexnet",)


def task_pairs(names: Sequence[str]) -> tuple:
    """(task id, num_classes) pairs straight from the label schema."""
    return tuple((name, dat.get_subtask(name).num_classes) for name in names)


def mtl_task_pairs(group: str) -> tuple:
    """Canonical multitask selections: sentiment plus all of Task B or Task C."""
    if group not in ("B", "C"):
        raise ValueError(f"MTL groups are 'B' or 'C', got {group!r}")
    return task_pairs(["sentiment"] + dat.TASK_GROUPS[group])


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one classifier (encoders + fusion + heads)."""

    tasks: tuple                                 # ((task id, num_classes), ...)
    text_encoder: "str | None" = "bilstm"        # builtin name, registered backbone, or None
    image_encoder: "str | None" = "alexnet"
    fusion: str = "early"                        # "early" | "gmu" (trainable fusions)
    modality_dim: int = 64                       # early-fusion projection width
    gmu_dim: int = 256
    head_hidden: "int | None" = 128
    batch_norm_fusion: bool = False
    adapter_policy: str = "frozen"
    text: "TextEncoderConfig | None" = None
    image: "ImageEncoderConfig | None" = None
    adapter_text_max_len: int = 199
    adapter_image_size: int = 256

    def __post_init__(self):
        if not self.tasks:
            raise ModelBuildError("ModelSpec needs at least one task")
        seen = set()
        for pair in self.tasks:
            name, k = pair
            sub = dat.get_subtask(name)
            if k != sub.num_classes:
                raise ModelBuildError(
                    f"task {name!r} has {sub.num_classes} classes, spec says {k}"
                )
            if name in seen:
                raise ModelBuildError(f"task {name!r} listed twice")
            seen.add(name)
        if self.text_encoder is None and self.image_encoder is None:
            raise ModelBuildError("ModelSpec needs at least one encoder")
        if self.multimodal and self.fusion not in ("early", "gmu"):
            raise ModelBuildError(
                f"unknown fusion {self.fusion!r} for a trainable model; late fusion "
                "combines finished models at inference time"
            )
        if self.modality_dim < 1 or self.gmu_dim < 1:
            raise ModelBuildError("fusion dims must be positive")
        if self.head_hidden is not None and self.head_hidden < 1:
            raise ModelBuildError("head_hidden must be positive or None")

    @property
    def multimodal(self) -> bool:
        return self.text_encoder is not None and self.image_encoder is not None

    @property
    def is_mtl(self) -> bool:
        return len(self.tasks) > 1

    @property
    def task_names(self) -> tuple:
        return tuple(name for name, _ in self.tasks)

    @property
    def joint_dim(self) -> int:
        return 2 * self.modality_dim if self.fusion == "early" else self.gmu_dim


class TaskHead(nn.Module):
    """Optional hidden dense layer then a softmax output layer (rows sum to 1)."""

    def __init__(self, in_dim: int, num_classes: int, hidden: "int | None" = 128):
        super().__init__()
        self.hidden = nn.Linear(in_dim, hidden) if hidden else None
        self.out = nn.Linear(hidden if hidden else in_dim, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.hidden is not None:
            x = F.relu(self.hidden(x))
        return F.softmax(self.out(x), dim=-1)


@dataclass
class Batch:
    """Model-ready tensors for a list of samples; labels only where needed."""

    ids: list
    text_ids: "torch.Tensor | None" = None
    text_lengths: "torch.Tensor | None" = None
    images: "torch.Tensor | None" = None
    labels: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def subset(self, indices) -> "Batch":
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        return Batch(
            ids=[self.ids[int(i)] for i in idx],
            text_ids=self.text_ids[idx] if self.text_ids is not None else None,
            text_lengths=self.text_lengths[idx] if self.text_lengths is not None else None,
            images=self.images[idx] if self.images is not None else None,
            labels={k: v[idx] for k, v in self.labels.items()},
        )


class MemeClassifier(nn.Module):
    """Encoders -> (fusion) -> per-task softmax heads, in spec task order."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.text_encoder = self._make_text_encoder(spec)
        self.image_encoder = self._make_image_encoder(spec)
        self.fusion = None
        if spec.multimodal:
            if spec.fusion == "early":
                from .fusion import EarlyFusion

                self.fusion = EarlyFusion(self.text_encoder.output_dim,
                                          self.image_encoder.output_dim,
                                          modality_dim=spec.modality_dim,
                                          batch_norm=spec.batch_norm_fusion)
            else:
                from .fusion import GatedMultimodalUnit

                self.fusion = GatedMultimodalUnit(self.text_encoder.output_dim,
                                                  self.image_encoder.output_dim,
                                                  hidden_dim=spec.gmu_dim)
            trunk_dim = self.fusion.output_dim
        else:
            enc = self.text_encoder if self.text_encoder is not None else self.image_encoder
            trunk_dim = enc.output_dim
        # the gated unit feeds its softmax layer directly, without a hidden dense
        hidden = None if (spec.multimodal and spec.fusion == "gmu") else spec.head_hidden
        self.heads = nn.ModuleDict(
            {name: TaskHead(trunk_dim, k, hidden=hidden) for name, k in spec.tasks}
        )
        for head in self.heads.values():
            for m in head.modules():
                if isinstance(m, nn.Linear):
                    nn.init.xavier_uniform_(m.weight)
                    nn.init.zeros_(m.bias)

    @staticmethod
    def _make_text_encoder(spec: ModelSpec):
        if spec.text_encoder is None:
            return None
        if spec.text_encoder in BUILTIN_TEXT_ENCODERS:
            if spec.text is None:
                raise ModelBuildError("text_encoder 'bilstm' requires a TextEncoderConfig")
            return BiLstmTextEncoder(spec.text)
        adapter = pretrained_adapter(spec.text_encoder, spec.adapter_policy)
        if adapter.modality != "text":
            raise ModelBuildError(f"backbone {spec.text_encoder!r} is not a text backbone")
        return adapter

    @staticmethod
    def _make_image_encoder(spec: ModelSpec):
        if spec.image_encoder is None:
            return None
        if spec.image_encoder in BUILTIN_IMAGE_ENCODERS:
            if spec.image is None:
                raise ModelBuildError("image_encoder 'alexnet' requires an ImageEncoderConfig")
            return ConvImageEncoder(spec.image)
        adapter = pretrained_adapter(spec.image_encoder, spec.adapter_policy)
        if adapter.modality != "image":
            raise ModelBuildError(f"backbone {spec.image_encoder!r} is not an image backbone")
        return adapter

    def trunk(self, batch: Batch) -> torch.Tensor:
        text_feat = image_feat = None
        if self.text_encoder is not None:
            if batch.text_ids is None:
                raise ValueError("model has a text encoder but the batch carries no text")
            text_feat = self.text_encoder(batch.text_ids, batch.text_lengths)
        if self.image_encoder is not None:
            if batch.images is None:
                raise ValueError("model has an image encoder but the batch carries no images")
            image_feat = self.image_encoder(batch.images)
        if self.fusion is not None:
            return self.fusion(text_feat, image_feat)
        return text_feat if text_feat is not None else image_feat

    def forward(self, batch: Batch) -> list:
        joint = self.trunk(batch)
        return [self.heads[name](joint) for name in self.spec.task_names]


def build_model(spec: ModelSpec, seed: int) -> MemeClassifier:
    """Instantiate a classifier with seeded (bit-reproducible) initialization."""
    torch.manual_seed(seed)
    model = MemeClassifier(spec)
    model.eval()
    return model


def forward_probs(model: MemeClassifier, batch: Batch, training: bool = False) -> list:
    """One forward pass returning per-task probability matrices."""
    was_training = model.training
    model.train(training)
    try:
        probs = model(batch)
    finally:
        model.train(was_training)
    return probs


def mtl_loss(per_task_losses: Sequence, weights: "Sequence | None" = None):
    """Weighted sum of per-task losses; equal (unit) weights by default."""
    if weights is None:
        weights = [1.0] * len(per_task_losses)
    if len(weights) != len(per_task_losses):
        raise ValueError(
            f"{len(per_task_losses)} losses but {len(weights)} weights"
        )
    if any(w < 0 for w in weights):
        raise ValueError("loss weights must be non-negative")
    return sum(w * loss for w, loss in zip(weights, per_task_losses))


def encode_batch(samples: Sequence[dat.MemeSample], spec: ModelSpec,
                 vocab: "textpipe.Vocab | None" = None,
                 with_labels: bool = True) -> Batch:
    """Turn raw samples into the tensors the spec'd model consumes."""
    batch = Batch(ids=[s.id for s in samples])
    if spec.text_encoder is not None:
        if vocab is None:
            raise ValueError("text models need a Vocab to encode the batch")
        max_len = spec.text.max_len if spec.text is not None else spec.adapter_text_max_len
        seqs = [textpipe.encode_sequence(textpipe.preprocess_text(s.text), vocab, max_len)
                for s in samples]
        batch.text_ids = torch.from_numpy(np.stack([q.ids for q in seqs]))
        batch.text_lengths = torch.tensor([q.true_length for q in seqs], dtype=torch.long)
    if spec.image_encoder is not None:
        if spec.image is not None:
            size, rescale = spec.image.input_size, spec.image.rescale
        else:
            size, rescale = spec.adapter_image_size, True
        planes = []
        for s in samples:
            if s.image_ref is None:
                raise DataError(f"sample {s.id!r} has no image but the model needs one")
            planes.append(preprocess_image(s.image_ref, size, rescale=rescale))
        stacked = np.stack(planes).transpose(0, 3, 1, 2)  # NHWC -> NCHW
        batch.images = torch.from_numpy(np.ascontiguousarray(stacked))
    if with_labels:
        for name in spec.task_names:
            batch.labels[name] = torch.tensor(
                [dat.task_label(s, name) for s in samples], dtype=torch.long
            )
    return batch
