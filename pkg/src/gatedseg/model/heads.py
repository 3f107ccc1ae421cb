"""Slice-level detection head and pixel-level segmentation head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError
from .grid import TokenGrid


class DetectionHead(nn.Module):
    """Pool stage-4 tokens, then a one-hidden-layer MLP to presence logits.

    Mean and max pooling are concatenated: the max channel keeps small
    structures (a few tokens) visible where mean pooling would dilute them.
    """

    def __init__(self, dim: int, hidden: int, num_roi: int):
        super().__init__()
        self.fc1 = nn.Linear(2 * dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, num_roi)

    def forward(self, grid: TokenGrid) -> torch.Tensor:
        pooled = torch.cat([grid.tokens.mean(dim=1), grid.tokens.max(dim=1).values], dim=1)
        return self.fc2(self.act(self.fc1(pooled)))


class SegmentationHead(nn.Module):
    """LayerNorm -> linear to num_classes -> reshape to grid -> bilinear
    upsample by the patch factor back to image resolution."""

    def __init__(self, dim: int, num_classes: int, upsample: tuple[int, int]):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.proj = nn.Linear(dim, num_classes)
        self.upsample = upsample

    def forward(self, grid: TokenGrid) -> torch.Tensor:
        x = self.proj(self.norm(grid.tokens))  # B, N, num_classes
        b, _, c = x.shape
        x = x.transpose(1, 2).reshape(b, c, grid.grid_h, grid.grid_w)
        return F.interpolate(x, scale_factor=self.upsample, mode="bilinear", align_corners=False)


def broadcast_det_probs(det_probs: torch.Tensor, num_classes: int) -> torch.Tensor:
    """Map detection probabilities onto segmentation channels.

    Channel counts either agree (per-class gating) or the model has a single
    segmentation channel gated by the most confident detection output.
    """
    if det_probs.shape[1] == num_classes:
        return det_probs
    if num_classes == 1:
        return det_probs.max(dim=1, keepdim=True).values
    raise ShapeError(
        f"cannot map {det_probs.shape[1]} detection outputs onto "
        f"{num_classes} segmentation channels"
    )
