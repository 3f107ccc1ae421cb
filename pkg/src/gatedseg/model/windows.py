"""Window partitioning and the attention mask used by shifted windows."""

from __future__ import annotations

import torch

from ..errors import ShapeError
from .grid import TokenGrid

MASK_NEG = -1e4


def window_partition(grid: TokenGrid, window_size: int) -> torch.Tensor:
    """Split a token grid into non-overlapping square windows.

    Returns (B * num_windows, window_size**2, C) with windows enumerated in
    row-major order; a pure rearrangement, no values are changed.
    """
    if grid.grid_h % window_size:
        raise ShapeError(f"grid_h {grid.grid_h} not divisible by window_size {window_size}")
    if grid.grid_w % window_size:
        raise ShapeError(f"grid_w {grid.grid_w} not divisible by window_size {window_size}")
    x = grid.as_2d()
    b, h, w, c = x.shape
    x = x.view(b, h // window_size, window_size, w // window_size, window_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(-1, window_size * window_size, c)


def window_reverse(windows: torch.Tensor, grid_h: int, grid_w: int, window_size: int) -> TokenGrid:
    """Exact inverse of :func:`window_partition`."""
    if windows.ndim != 3 or windows.shape[1] != window_size * window_size:
        raise ShapeError(
            f"windows must be (B*nW, {window_size * window_size}, C), got {tuple(windows.shape)}"
        )
    if grid_h % window_size or grid_w % window_size:
        raise ShapeError(f"grid {grid_h}x{grid_w} not divisible by window_size {window_size}")
    nw = (grid_h // window_size) * (grid_w // window_size)
    if windows.shape[0] % nw:
        raise ShapeError(
            f"window count {windows.shape[0]} inconsistent with {nw} windows per batch item"
        )
    b = windows.shape[0] // nw
    c = windows.shape[2]
    x = windows.view(b, grid_h // window_size, grid_w // window_size, window_size, window_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous().view(b, grid_h, grid_w, c)
    return TokenGrid.from_2d(x)


def shift_region_labels(grid_h: int, grid_w: int, window_size: int, shift: int) -> torch.Tensor:
    """Label every grid position by its pre-shift region.

    After a cyclic shift by (-shift, -shift), tokens from different sides of
    the wrap-around boundary land in the same window; positions sharing a
    label may attend to each other, the rest are masked.
    """
    labels = torch.zeros(grid_h, grid_w, dtype=torch.long)
    h_slices = (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None))
    w_slices = (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None))
    cnt = 0
    for hs in h_slices:
        for ws in w_slices:
            labels[hs, ws] = cnt
            cnt += 1
    return labels


def build_shift_attention_mask(
    grid_h: int, grid_w: int, window_size: int, shift: int
) -> torch.Tensor | None:
    """Additive attention mask (num_windows, ws^2, ws^2) for a shifted step.

    Entries are 0 for same-region token pairs and MASK_NEG otherwise; a zero
    shift needs no mask and returns None.
    """
    if shift == 0:
        return None
    if not 0 < shift < window_size:
        raise ShapeError(f"shift {shift} must satisfy 0 <= shift < window_size {window_size}")
    labels = shift_region_labels(grid_h, grid_w, window_size, shift)
    shifted = torch.roll(labels, shifts=(-shift, -shift), dims=(0, 1))
    win = window_partition(TokenGrid.from_2d(shifted[None, :, :, None].float()), window_size)
    win = win.squeeze(-1)  # (num_windows, ws^2)
    diff = win.unsqueeze(1) - win.unsqueeze(2)
    return torch.where(diff == 0, 0.0, MASK_NEG)
