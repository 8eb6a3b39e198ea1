"""Per-modality encoders producing fixed-length feature vectors.

Text: embedding + bidirectional LSTM (masked recurrence, recurrent dropout),
output = concatenated final hidden states of both directions.
Image: AlexNet-style CNN trained from scratch (conv stack + dense layers).
Pretrained backbones plug in through the adapter registry; only their
projection heads live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError, ModelBuildError


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    embedding_dim: int = 32
    lstm_units: int = 32
    dropout: float = 0.5
    recurrent_dropout: float = 0.2
    num_layers: int = 1     # the multitask variant stacks a second BiLSTM layer
    max_len: int = 64

    def __post_init__(self):
        if self.vocab_size < 2 or self.embedding_dim < 1 or self.lstm_units < 1:
            raise ValueError("text encoder dims must be positive (vocab_size >= 2)")
        if not (0 <= self.dropout < 1 and 0 <= self.recurrent_dropout < 1):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.num_layers < 1 or self.max_len < 1:
            raise ValueError("num_layers and max_len must be >= 1")


@dataclass(frozen=True)
class ImageEncoderConfig:
    input_size: int = 224
    conv_filters: tuple = (96, 128, 128, 256, 256)
    kernel_sizes: tuple = (11, 5, 3, 3, 3)
    strides: tuple = (4, 1, 1, 1, 1)
    paddings: tuple = (2, 2, 1, 1, 1)
    pool_after: tuple = (0, 1, 4)   # conv block indices followed by 3x3/2 max pooling
    dense_sizes: tuple = (1024, 1024)
    dropout: float = 0.4
    rescale: bool = True

    def __post_init__(self):
        n = len(self.conv_filters)
        if not (len(self.kernel_sizes) == len(self.strides) == len(self.paddings) == n):
            raise ValueError("kernel_sizes, strides and paddings must match conv_filters")
        if n == 0 or not self.dense_sizes:
            raise ValueError("need at least one conv block and one dense layer")
        if any(i >= n for i in self.pool_after):
            raise ValueError("pool_after indexes a nonexistent conv block")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.input_size < 1:
            raise ValueError("input_size must be positive")


def _glorot(tensor: torch.Tensor) -> None:
    if tensor.dim() >= 2:
        nn.init.xavier_uniform_(tensor)
    else:
        nn.init.zeros_(tensor)


class _LstmDirection(nn.Module):
    """One direction of an LSTM layer, run as an explicit masked scan."""

    def __init__(self, input_dim: int, units: int):
        super().__init__()
        self.units = units
        self.w_ih = nn.Parameter(torch.empty(input_dim, 4 * units))
        self.w_hh = nn.Parameter(torch.empty(units, 4 * units))
        self.bias = nn.Parameter(torch.empty(4 * units))
        self.reset_parameters()

    def reset_parameters(self):
        _glorot(self.w_ih)
        _glorot(self.w_hh)
        nn.init.zeros_(self.bias)
        # forget gate bias 1 (gate order: input, forget, cell, output)
        with torch.no_grad():
            self.bias[self.units:2 * self.units].fill_(1.0)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, reverse: bool,
                recurrent_mask: "torch.Tensor | None" = None):
        """Scan over time; masked steps carry state through unchanged.

        Returns (per-step hidden states (B, L, H), final hidden state (B, H)).
        With all-zero mask the state never leaves its zero initialization.
        """
        batch, length, _ = x.shape
        h = x.new_zeros(batch, self.units)
        c = x.new_zeros(batch, self.units)
        outputs = [None] * length
        steps = range(length - 1, -1, -1) if reverse else range(length)
        for t in steps:
            m = mask[:, t].unsqueeze(1)
            h_rec = h * recurrent_mask if recurrent_mask is not None else h
            z = x[:, t] @ self.w_ih + h_rec @ self.w_hh + self.bias
            i, f, g, o = z.chunk(4, dim=1)
            i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
            g = torch.tanh(g)
            c_new = f * c + i * g
            h_new = o * torch.tanh(c_new)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            outputs[t] = h
        return torch.stack(outputs, dim=1), h


class BiLstmLayer(nn.Module):
    def __init__(self, input_dim: int, units: int, recurrent_dropout: float):
        super().__init__()
        self.recurrent_dropout = recurrent_dropout
        self.forward_cell = _LstmDirection(input_dim, units)
        self.backward_cell = _LstmDirection(input_dim, units)

    def _recurrent_mask(self, x: torch.Tensor) -> "torch.Tensor | None":
        if not self.training or self.recurrent_dropout == 0:
            return None
        keep = 1.0 - self.recurrent_dropout
        shape = (x.shape[0], self.forward_cell.units)
        # one mask per forward pass, shared across timesteps
        return torch.bernoulli(x.new_full(shape, keep)) / keep

    def forward(self, x: torch.Tensor, mask: torch.Tensor):
        fwd_seq, fwd_last = self.forward_cell(x, mask, reverse=False,
                                              recurrent_mask=self._recurrent_mask(x))
        bwd_seq, bwd_last = self.backward_cell(x, mask, reverse=True,
                                               recurrent_mask=self._recurrent_mask(x))
        return torch.cat([fwd_seq, bwd_seq], dim=-1), torch.cat([fwd_last, bwd_last], dim=-1)


class BiLstmTextEncoder(nn.Module):
    """Embedding + (stacked) BiLSTM; emits 2 * lstm_units features per sample."""

    modality = "text"

    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        self.config = config
        self.output_dim = 2 * config.lstm_units
        self.embedding = nn.Embedding(config.vocab_size, config.embedding_dim, padding_idx=0)
        _glorot(self.embedding.weight)
        with torch.no_grad():
            self.embedding.weight[0].zero_()
        self.dropout = nn.Dropout(config.dropout)
        layers = []
        in_dim = config.embedding_dim
        for _ in range(config.num_layers):
            layers.append(BiLstmLayer(in_dim, config.lstm_units, config.recurrent_dropout))
            in_dim = 2 * config.lstm_units
        self.layers = nn.ModuleList(layers)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        if ids.dim() != 2 or lengths.shape != ids.shape[:1]:
            raise ValueError(f"expected ids (B, L) and lengths (B,), got {tuple(ids.shape)} "
                             f"and {tuple(lengths.shape)}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.embedding(ids)
        mask = (positions.unsqueeze(0) < lengths.unsqueeze(1)).to(x.dtype)
        x = self.dropout(x)
        final = None
        for layer in self.layers:
            x, final = layer(x, mask)
            x = self.dropout(x)
        return self.dropout(final)


class ConvImageEncoder(nn.Module):
    """AlexNet-style conv stack plus dense layers; trained from scratch."""

    modality = "image"

    def __init__(self, config: ImageEncoderConfig):
        super().__init__()
        self.config = config
        blocks = []
        channels = 3
        size = config.input_size
        for i, (filters, kernel, stride, pad) in enumerate(
                zip(config.conv_filters, config.kernel_sizes, config.strides,
                    config.paddings)):
            blocks.append(nn.Conv2d(channels, filters, kernel, stride=stride, padding=pad))
            blocks.append(nn.ReLU())
            size = (size + 2 * pad - kernel) // stride + 1
            if i in config.pool_after:
                blocks.append(nn.MaxPool2d(3, stride=2))
                size = (size - 3) // 2 + 1
            if size < 1:
                raise ModelBuildError(
                    f"image encoder config collapses the feature map at conv block {i} "
                    f"(input_size {config.input_size} is too small)"
                )
            channels = filters
        self.features = nn.Sequential(*blocks)
        self.flat_dim = channels * size * size
        dense = []
        in_dim = self.flat_dim
        for width in config.dense_sizes:
            dense += [nn.Linear(in_dim, width), nn.ReLU(), nn.Dropout(config.dropout)]
            in_dim = width
        self.dense = nn.Sequential(*dense)
        self.output_dim = config.dense_sizes[-1]
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                _glorot(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        s = self.config.input_size
        if images.dim() != 4 or images.shape[1:] != (3, s, s):
            raise ValueError(f"expected images (B, 3, {s}, {s}), got {tuple(images.shape)}")
        x = self.features(images)
        return self.dense(x.flatten(1))


def preprocess_image(image, target_size: int, rescale: bool = True) -> np.ndarray:
    """Decode/convert to RGB, bilinear-resize to target_size^2, optionally scale to [0,1].

    Accepts a file path, a PIL image, or an HxW / HxWxC uint8-like array;
    grayscale is replicated to 3 channels. Returns float32 (target, target, 3).
    """
    from PIL import Image, UnidentifiedImageError

    if target_size < 1:
        raise ValueError(f"target_size must be >= 1, got {target_size}")
    if isinstance(image, (str, bytes)) or hasattr(image, "__fspath__"):
        try:
            pil = Image.open(image)
            pil.load()
        except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
            raise DataError(f"cannot decode image {image!r}: {e}") from None
    elif isinstance(image, Image.Image):
        pil = image
    else:
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4) or min(arr.shape[:2]) < 1:
            raise DataError(f"cannot interpret array of shape {arr.shape} as an image")
        arr = np.clip(arr, 0, 255).astype(np.uint8)
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        pil = Image.fromarray(arr[:, :, :3])
    if pil.width < 1 or pil.height < 1:
        raise DataError("zero-dimension image")
    pil = pil.convert("RGB")
    if (pil.width, pil.height) != (target_size, target_size):
        pil = pil.resize((target_size, target_size), Image.BILINEAR)
    out = np.asarray(pil, dtype=np.float32)
    if rescale:
        out = out / 255.0
    return out


# ---------------------------------------------------------------------------
# Pretrained backbone adapters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackboneEntry:
    name: str
    modality: str
    output_dim: int
    factory: Callable[[], object]


_BACKBONES: dict[str, BackboneEntry] = {}


def register_backbone(name: str, modality: str, output_dim: int,
                      factory: Callable[[], object]) -> None:
    """Register an external feature extractor under `name` (re-registration replaces)."""
    if modality not in ("text", "image"):
        raise ValueError(f"modality must be 'text' or 'image', got {modality!r}")
    if output_dim < 1:
        raise ValueError("output_dim must be positive")
    _BACKBONES[name] = BackboneEntry(name, modality, output_dim, factory)


def available_backbones() -> dict[str, tuple[str, int]]:
    return {name: (e.modality, e.output_dim) for name, e in sorted(_BACKBONES.items())}


def unregister_backbone(name: str) -> None:
    _BACKBONES.pop(name, None)


class PretrainedAdapter(nn.Module):
    """Wraps a registered backbone behind the encoder feature contract.

    The vision head is two dense layers [768, 256]; the text head is batch
    normalization followed by one dense layer of 256. Only the head trains
    under the "frozen" policy.
    """

    def __init__(self, entry: BackboneEntry, frozen_layers_policy: str = "frozen",
                 vision_hidden: tuple = (768, 256), text_hidden: int = 256):
        super().__init__()
        if frozen_layers_policy not in ("frozen", "finetune"):
            raise ModelBuildError(
                f"unknown frozen_layers_policy {frozen_layers_policy!r}; "
                "expected 'frozen' or 'finetune'"
            )
        self.entry = entry
        self.modality = entry.modality
        self.frozen = frozen_layers_policy == "frozen"
        backbone = entry.factory()
        if isinstance(backbone, nn.Module):
            self.backbone = backbone
            if self.frozen:
                for p in self.backbone.parameters():
                    p.requires_grad_(False)
                self.backbone.eval()
        else:
            if not self.frozen:
                raise ModelBuildError(
                    f"backbone {entry.name!r} is not a torch module and cannot be finetuned"
                )
            self.backbone = None
            self._backbone_fn = backbone
        if entry.modality == "image":
            head = []
            in_dim = entry.output_dim
            for width in vision_hidden:
                head += [nn.Linear(in_dim, width), nn.ReLU()]
                in_dim = width
            self.head = nn.Sequential(*head)
            self.output_dim = vision_hidden[-1]
        else:
            self.head = nn.Sequential(
                nn.BatchNorm1d(entry.output_dim),
                nn.Linear(entry.output_dim, text_hidden),
                nn.ReLU(),
            )
            self.output_dim = text_hidden
        for m in self.head.modules():
            if isinstance(m, nn.Linear):
                _glorot(m.weight)
                nn.init.zeros_(m.bias)

    def _extract(self, *inputs) -> torch.Tensor:
        fn = self.backbone if self.backbone is not None else self._backbone_fn
        if self.frozen:
            with torch.no_grad():
                feats = fn(*inputs)
        else:
            feats = fn(*inputs)
        if not isinstance(feats, torch.Tensor):
            feats = torch.as_tensor(np.asarray(feats), dtype=torch.float32)
        if feats.dim() != 2 or feats.shape[1] != self.entry.output_dim:
            raise ModelBuildError(
                f"backbone {self.entry.name!r} emitted shape {tuple(feats.shape)}, "
                f"declared output_dim {self.entry.output_dim}"
            )
        return feats

    def forward(self, *inputs) -> torch.Tensor:
        feats = self._extract(*inputs)
        ref = next(iter(self.head.parameters()))
        return self.head(feats.to(ref.dtype))

    def encode(self, *inputs) -> torch.Tensor:
        return self(*inputs)


def pretrained_adapter(name: str, frozen_layers_policy: str = "frozen") -> PretrainedAdapter:
    """Instantiate a registered backbone behind the feature-vector contract."""
    if name not in _BACKBONES:
        registered = ", ".join(sorted(_BACKBONES)) or "(none)"
        raise ModelBuildError(
            f"unknown backbone {name!r}; registered backbones: {registered}"
        )
    return PretrainedAdapter(_BACKBONES[name], frozen_layers_policy)
