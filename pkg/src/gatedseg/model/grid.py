"""Token-grid container: a batch of token sequences with explicit 2D geometry."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import ShapeError


@dataclass
class TokenGrid:
    """Tokens of shape (B, N, C) laid out row-major on a grid_h x grid_w grid."""

    tokens: torch.Tensor
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise ShapeError(f"tokens must be 3D (B, N, C), got {tuple(self.tokens.shape)}")
        n = self.tokens.shape[1]
        if n != self.grid_h * self.grid_w:
            raise ShapeError(
                f"token count {n} does not match grid {self.grid_h}x{self.grid_w}"
            )

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def as_2d(self) -> torch.Tensor:
        """View tokens as (B, grid_h, grid_w, C)."""
        b, _, c = self.tokens.shape
        return self.tokens.view(b, self.grid_h, self.grid_w, c)

    @classmethod
    def from_2d(cls, x: torch.Tensor) -> "TokenGrid":
        b, h, w, c = x.shape
        return cls(x.reshape(b, h * w, c), h, w)
