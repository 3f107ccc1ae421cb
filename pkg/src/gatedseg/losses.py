"""Training objectives and the per-slice overlap metrics derived from them.

All overlap quantities use soft confusion counts (TP = sum p*g etc.), so the
same formulas serve differentiable training and, fed with thresholded
predictions, exact integer-count evaluation.
"""

from __future__ import annotations

import torch

from .config import TverskyParams
from .errors import DataError, ShapeError


def _check_pair(pred: torch.Tensor, gt: torch.Tensor):
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {tuple(pred.shape)} != gt shape {tuple(gt.shape)}")
    if pred.min() < 0 or pred.max() > 1:
        raise DataError("pred probabilities outside [0, 1]")


def _soft_counts(pred: torch.Tensor, gt: torch.Tensor):
    """Per (slice, class) soft TP/FP/FN over the spatial dims."""
    dims = tuple(range(2, pred.ndim))
    gt = gt.to(pred.dtype)
    tp = (pred * gt).sum(dim=dims)
    fp = (pred * (1 - gt)).sum(dim=dims)
    fn = ((1 - pred) * gt).sum(dim=dims)
    return tp, fp, fn


def tversky_loss(pred: torch.Tensor, gt: torch.Tensor, params: TverskyParams) -> torch.Tensor:
    """Mean over (slice, class) of 1 - (TP + s) / (TP + a*FP + b*FN + s).

    Computed slice by slice so every 2D slice contributes equally; an empty
    prediction on an empty ground truth scores a loss of exactly 0.
    """
    _check_pair(pred, gt)
    tp, fp, fn = _soft_counts(pred, gt)
    ti = (tp + params.smooth) / (tp + params.alpha * fp + params.beta * fn + params.smooth)
    return (1.0 - ti).mean()


def dice_loss(pred: torch.Tensor, gt: torch.Tensor, smooth: float = 1e-6) -> torch.Tensor:
    """Per-(slice, class) Dice loss 1 - (2TP + s)/(2TP + FP + FN + s), unreduced."""
    _check_pair(pred, gt)
    tp, fp, fn = _soft_counts(pred, gt)
    return 1.0 - (2 * tp + smooth) / (2 * tp + fp + fn + smooth)


def detection_loss(det_logits: torch.Tensor, presence: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy with logits, log-sum-exp stabilized."""
    if det_logits.shape != presence.shape:
        raise ShapeError(
            f"det_logits shape {tuple(det_logits.shape)} != presence shape {tuple(presence.shape)}"
        )
    y = presence.to(det_logits.dtype)
    # max(x, 0) - x*y + log(1 + exp(-|x|))
    loss = det_logits.clamp_min(0) - det_logits * y + torch.log1p(torch.exp(-det_logits.abs()))
    return loss.mean()


def combined_loss(seg_term: torch.Tensor, det_term: torch.Tensor,
                  lambda_det: float = 1.0) -> torch.Tensor:
    total = seg_term + lambda_det * det_term
    if not torch.isfinite(total):
        raise DataError(
            f"non-finite combined loss: seg={float(seg_term)} det={float(det_term)}"
        )
    return total


def presence_from_mask(gt: torch.Tensor) -> torch.Tensor:
    """Per-class presence flags: True iff any pixel of the class is positive.

    Accepts (C, H, W) or (B, C, H, W); returns bool (C,) or (B, C).
    """
    dims = tuple(range(gt.ndim - 2, gt.ndim))
    return gt.sum(dim=dims) > 0
