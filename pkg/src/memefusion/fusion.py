"""Bimodal fusion blocks: early (concatenation), gated multimodal unit, late (averaging)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class EarlyFusion(nn.Module):
    """Concatenation fusion with a shared projection.

    Each modality is projected to modality_dim by its own dense layer, both
    projections then pass through one shared dense layer (same weights for
    text and image), are concatenated in fixed [text; image] order, and a
    final dense layer mixes the joint vector. Output size 2 * modality_dim.
    """

    def __init__(self, text_dim: int, image_dim: int, modality_dim: int = 64,
                 batch_norm: bool = False):
        super().__init__()
        self.text_dim = text_dim
        self.image_dim = image_dim
        self.modality_dim = modality_dim
        self.output_dim = 2 * modality_dim
        self.batch_norm = batch_norm
        if batch_norm:
            self.text_norm = nn.BatchNorm1d(text_dim)
            self.image_norm = nn.BatchNorm1d(image_dim)
        self.text_proj = nn.Linear(text_dim, modality_dim)
        self.image_proj = nn.Linear(image_dim, modality_dim)
        self.shared = nn.Linear(modality_dim, modality_dim)
        self.joint = nn.Linear(self.output_dim, self.output_dim)

    def forward(self, text_feat: torch.Tensor, image_feat: torch.Tensor) -> torch.Tensor:
        if text_feat.shape[-1] != self.text_dim or image_feat.shape[-1] != self.image_dim:
            raise ValueError(
                f"feature dims ({text_feat.shape[-1]}, {image_feat.shape[-1]}) do not match "
                f"fusion dims ({self.text_dim}, {self.image_dim})"
            )
        if self.batch_norm:
            text_feat = self.text_norm(text_feat)
            image_feat = self.image_norm(image_feat)
        t = F.relu(self.shared(F.relu(self.text_proj(text_feat))))
        v = F.relu(self.shared(F.relu(self.image_proj(image_feat))))
        return F.relu(self.joint(torch.cat([t, v], dim=-1)))


class GatedMultimodalUnit(nn.Module):
    """Bimodal gated unit mixing tanh transforms of each modality.

    h_t = tanh(W_t x_t + b_t), h_v = tanh(W_v x_v + b_v),
    z = sigmoid(W_z [x_t; x_v] + b_z), output = z * h_t + (1 - z) * h_v.
    The gate reads the raw (untransformed) features of both modalities.
    """

    def __init__(self, text_dim: int, image_dim: int, hidden_dim: int = 256):
        super().__init__()
        self.text_dim = text_dim
        self.image_dim = image_dim
        self.output_dim = hidden_dim
        self.text_transform = nn.Linear(text_dim, hidden_dim)
        self.image_transform = nn.Linear(image_dim, hidden_dim)
        self.gate = nn.Linear(text_dim + image_dim, hidden_dim)

    def forward(self, text_feat: torch.Tensor, image_feat: torch.Tensor) -> torch.Tensor:
        if text_feat.shape[-1] != self.text_dim or image_feat.shape[-1] != self.image_dim:
            raise ValueError(
                f"feature dims ({text_feat.shape[-1]}, {image_feat.shape[-1]}) do not match "
                f"GMU dims ({self.text_dim}, {self.image_dim})"
            )
        h_t = torch.tanh(self.text_transform(text_feat))
        h_v = torch.tanh(self.image_transform(image_feat))
        z = torch.sigmoid(self.gate(torch.cat([text_feat, image_feat], dim=-1)))
        return z * h_t + (1.0 - z) * h_v


def late_fuse(prob_list, weights=None) -> np.ndarray:
    """Weighted average of probability vectors (or row-stochastic matrices), renormalized.

    With equal weights this is the plain mean of the models' prediction scores.
    """
    if len(prob_list) == 0:
        raise ValueError("prob_list must contain at least one model's probabilities")
    arrays = [np.asarray(p, dtype=np.float64) for p in prob_list]
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ValueError(f"probability shapes differ: {shape} vs {a.shape}")
        sums = a.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(a < 0):
            raise ValueError("inputs must be probability vectors summing to 1 (within 1e-6)")
    if weights is None:
        weights = [1.0] * len(arrays)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(arrays),):
        raise ValueError(f"need one weight per model: got {w.shape} for {len(arrays)} models")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    mixed = sum(wi * a for wi, a in zip(w, arrays)) / w.sum()
    return mixed / mixed.sum(axis=-1, keepdims=True)
