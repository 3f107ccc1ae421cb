"""Previous-slice mask encoding and cross-attention fusion into the encoder."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..config import ModelConfig
from ..errors import ConfigError, ShapeError
from .attention import CrossAttention
from .grid import TokenGrid


class ContextEncoder(nn.Module):
    """Strided-convolution pyramid turning the previous-slice mask into
    context token grids, one per encoder stage.

    All convolutions are non-overlapping (kernel == stride), so every
    context token has an exact rectangular receptive field in the mask.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        h, w = config.image_size
        g1 = config.stage_grid(1)
        # image -> stage-1 grid in one non-overlapping strided conv
        k1 = (h // g1[0], w // g1[1])
        c1, c2, c3, c4 = (config.stage_channels(s) for s in (1, 2, 3, 4))
        self.stem = nn.Conv2d(config.num_classes, c1, kernel_size=k1, stride=k1)
        self.down2 = nn.Conv2d(c1, c2, kernel_size=2, stride=2)
        self.down3 = nn.Conv2d(c2, c3, kernel_size=2, stride=2)
        self.proj4 = nn.Conv2d(c3, c4, kernel_size=1, stride=1)
        self.act = nn.GELU()
        self.config = config

    def receptive_field(self, stage: int, gy: int, gx: int) -> tuple[int, int, int, int]:
        """Mask-pixel box (y0, y1, x0, x1) feeding context token (gy, gx)."""
        h, w = self.config.image_size
        gh, gw = self.config.stage_grid(stage)
        ty, tx = h // gh, w // gw
        return (gy * ty, (gy + 1) * ty, gx * tx, (gx + 1) * tx)

    def forward(self, prev_mask: torch.Tensor) -> dict[int, TokenGrid]:
        if prev_mask.ndim != 4:
            raise ShapeError(f"prev_mask must be 4D (B, C, H, W), got {tuple(prev_mask.shape)}")
        if tuple(prev_mask.shape[-2:]) != self.config.image_size:
            raise ShapeError(
                f"prev_mask spatial dims {tuple(prev_mask.shape[-2:])} "
                f"!= image_size {self.config.image_size}"
            )
        f1 = self.stem(prev_mask)
        f2 = self.down2(self.act(f1))
        f3 = self.down3(self.act(f2))
        f4 = self.proj4(self.act(f3))
        out = {}
        for stage, f in zip((1, 2, 3, 4), (f1, f2, f3, f4)):
            b, c, gh, gw = f.shape
            out[stage] = TokenGrid(f.flatten(2).transpose(1, 2), gh, gw)
        return out

    def encode_stage(self, prev_mask: torch.Tensor, stage: int) -> TokenGrid:
        if stage not in (1, 2, 3, 4):
            raise ConfigError(f"stage index {stage} outside 1..4")
        return self.forward(prev_mask)[stage]


class ContextFusion(nn.Module):
    """Residual cross-attention: queries from encoder tokens, keys/values
    from context tokens. out = enc + crossattn(norm(enc), norm(ctx))."""

    def __init__(self, dim: int, num_heads: int, qkv_bias: bool = True):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = CrossAttention(dim, num_heads, qkv_bias)

    def forward(self, encoder: TokenGrid, context: TokenGrid) -> TokenGrid:
        if encoder.channels != context.channels:
            raise ShapeError(
                f"context fusion channel mismatch: encoder {encoder.channels} "
                f"vs context {context.channels}"
            )
        if encoder.batch != context.batch:
            raise ShapeError(
                f"context fusion batch mismatch: {encoder.batch} vs {context.batch}"
            )
        x = encoder.tokens + self.attn(self.norm_q(encoder.tokens), self.norm_kv(context.tokens))
        return TokenGrid(x, encoder.grid_h, encoder.grid_w)
