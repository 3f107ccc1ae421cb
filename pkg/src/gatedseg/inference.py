"""Autoregressive volume inference: slice z feeds its gated, thresholded
prediction to slice z+1 as context."""

from __future__ import annotations

import numpy as np
import torch

from .data.normalize import NormStats, normalize_volume
from .data.volume import VolumeRecord
from .errors import ShapeError
from .model.net import GatedSegNet, gate


@torch.no_grad()
def infer_volume(model: GatedSegNet, volume: VolumeRecord, stats: NormStats,
                 gating_mode: str | None = None, threshold: float | None = None):
    """Run the model over a volume in ascending z.

    Returns (probs (C, Z, H, W) float32, hard_masks (C, Z, H, W) uint8,
    det_probs (Z, num_roi) float32). The context for slice z is the hard
    gated prediction of slice z-1; slice 0 gets zeros.
    """
    cfg = model.config
    mode = gating_mode if gating_mode is not None else cfg.gating_mode
    thr = threshold if threshold is not None else cfg.gating_threshold
    h, w = volume.image.shape[1:]
    if (h, w) != cfg.image_size:
        raise ShapeError(
            f"volume slices are {h}x{w} but the model expects {cfg.image_size}"
        )
    zdim = volume.num_slices
    c = cfg.num_classes

    model.eval()
    volume = normalize_volume(volume, stats)
    probs = np.zeros((c, zdim, h, w), dtype=np.float32)
    hard = np.zeros((c, zdim, h, w), dtype=np.uint8)
    det = np.zeros((zdim, cfg.num_roi), dtype=np.float32)
    prev = torch.zeros(1, c, h, w)
    for z in range(zdim):
        image = torch.from_numpy(volume.image[z][None, None])
        pred = model(image, prev)
        gated = gate(pred.seg_logits, pred.det_probs, mode, thr)
        p = gated.seg_probs[0]
        probs[:, z] = p.numpy()
        hard[:, z] = (p >= 0.5).numpy().astype(np.uint8)
        det[z] = pred.det_probs[0].numpy()
        prev = (p >= 0.5).float()[None]
    return probs, hard, det
