"""Building blocks: patch embedding, Swin blocks, patch merge/expand, skip fusion."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ShapeError
from .attention import WindowAttention
from .grid import TokenGrid
from .windows import build_shift_attention_mask, window_partition, window_reverse


class PatchEmbed(nn.Module):
    """Learned linear projection of non-overlapping flattened patches."""

    def __init__(self, in_channels: int, patch_size: tuple[int, int], embed_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, image: torch.Tensor) -> TokenGrid:
        if image.ndim != 4:
            raise ShapeError(f"image must be 4D (B, C, H, W), got {tuple(image.shape)}")
        _, _, h, w = image.shape
        ph, pw = self.patch_size
        if h % ph:
            raise ShapeError(f"image height {h} not divisible by patch height {ph}")
        if w % pw:
            raise ShapeError(f"image width {w} not divisible by patch width {pw}")
        x = self.proj(image)  # B, D, h/ph, w/pw
        b, d, gh, gw = x.shape
        return TokenGrid(x.flatten(2).transpose(1, 2), gh, gw)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class SwinBlock(nn.Module):
    """Pre-norm residual block: windowed (optionally shifted) attention + MLP.

    The shift cyclically rolls the grid by (-shift, -shift) before
    partitioning and rolls back afterwards; windows straddling the wrap
    boundary get an additive mask so tokens only attend within their
    pre-shift region.
    """

    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int,
                 mlp_ratio: float = 4.0, qkv_bias: bool = True):
        super().__init__()
        if not 0 <= shift < window_size:
            raise ShapeError(f"shift {shift} must satisfy 0 <= shift < window_size {window_size}")
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size, qkv_bias)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._mask_cache: dict[tuple, torch.Tensor | None] = {}

    def _mask_for(self, grid_h: int, grid_w: int, device, dtype):
        key = (grid_h, grid_w, device, dtype)
        if key not in self._mask_cache:
            mask = build_shift_attention_mask(grid_h, grid_w, self.window_size, self.shift)
            if mask is not None:
                mask = mask.to(device=device, dtype=dtype)
            self._mask_cache[key] = mask
        return self._mask_cache[key]

    def _attend(self, x: torch.Tensor, grid_h: int, grid_w: int) -> torch.Tensor:
        grid = TokenGrid(x, grid_h, grid_w)
        if self.shift:
            shifted = torch.roll(grid.as_2d(), shifts=(-self.shift, -self.shift), dims=(1, 2))
            grid = TokenGrid.from_2d(shifted)
        mask = self._mask_for(grid_h, grid_w, x.device, x.dtype)
        windows = window_partition(grid, self.window_size)
        windows = self.attn(windows, mask)
        out = window_reverse(windows, grid_h, grid_w, self.window_size)
        if self.shift:
            unshifted = torch.roll(out.as_2d(), shifts=(self.shift, self.shift), dims=(1, 2))
            out = TokenGrid.from_2d(unshifted)
        return out.tokens

    def forward(self, grid: TokenGrid) -> TokenGrid:
        x = grid.tokens
        x = x + self._attend(self.norm1(x), grid.grid_h, grid.grid_w)
        x = x + self.mlp(self.norm2(x))
        return TokenGrid(x, grid.grid_h, grid.grid_w)


def make_stage_blocks(dim: int, depth: int, num_heads: int, window_size: int,
                      grid: tuple[int, int], mlp_ratio: float, qkv_bias: bool) -> nn.ModuleList:
    """Blocks alternating shift 0 and window_size // 2, window clamped to the grid."""
    ws = min(window_size, grid[0], grid[1])
    shift = ws // 2
    return nn.ModuleList(
        SwinBlock(dim, num_heads, ws, 0 if i % 2 == 0 else shift, mlp_ratio, qkv_bias)
        for i in range(depth)
    )


class PatchMerge(nn.Module):
    """2x2 neighbourhood concatenation -> LayerNorm -> linear 4C -> 2C."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, grid: TokenGrid) -> TokenGrid:
        if grid.grid_h % 2 or grid.grid_w % 2:
            raise ShapeError(
                f"patch_merge needs an even grid, got {grid.grid_h}x{grid.grid_w}"
            )
        x = grid.as_2d()
        x0 = x[:, 0::2, 0::2]
        x1 = x[:, 1::2, 0::2]
        x2 = x[:, 0::2, 1::2]
        x3 = x[:, 1::2, 1::2]
        x = torch.cat([x0, x1, x2, x3], dim=-1)
        x = self.reduction(self.norm(x))
        return TokenGrid.from_2d(x)


class PatchExpand(nn.Module):
    """Linear C -> 2C, then channels rearranged to a 2x2 spatial block:
    tokens x4, channels /2 (inverse geometry of PatchMerge)."""

    def __init__(self, dim: int):
        super().__init__()
        self.expand = nn.Linear(dim, 2 * dim, bias=False)
        self.norm = nn.LayerNorm(dim // 2)

    def forward(self, grid: TokenGrid) -> TokenGrid:
        x = self.expand(grid.tokens)  # B, N, 2C
        b, n, c2 = x.shape
        c_out = c2 // 4
        x = x.view(b, grid.grid_h, grid.grid_w, 2, 2, c_out)
        x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
        x = x.view(b, grid.grid_h * 2, grid.grid_w * 2, c_out)
        x = self.norm(x)
        return TokenGrid.from_2d(x)


class SkipFuse(nn.Module):
    """Concatenate decoder tokens with the encoder skip and project back."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim, bias=False)

    def forward(self, decoder: TokenGrid, skip: TokenGrid) -> TokenGrid:
        if decoder.tokens.shape != skip.tokens.shape:
            raise ShapeError(
                f"skip fusion shape mismatch: decoder {tuple(decoder.tokens.shape)} "
                f"vs skip {tuple(skip.tokens.shape)}"
            )
        x = self.proj(torch.cat([decoder.tokens, skip.tokens], dim=-1))
        return TokenGrid(x, decoder.grid_h, decoder.grid_w)
