"""Stochastic slice augmentation.

One draw applies, in order: 90-degree rotation, horizontal/vertical flips,
elastic deformation, brightness/contrast jitter (image only) and Gaussian
noise (image only). The same geometric transform hits image, context mask
and ground-truth mask; masks are re-binarized and presence recomputed.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from ..config import AugmentConfig
from .samples import SliceSample


def _elastic_fields(shape, max_disp: float, smooth_sigma: float, rng: np.random.Generator):
    dy = gaussian_filter(rng.uniform(-1, 1, shape), smooth_sigma, mode="reflect")
    dx = gaussian_filter(rng.uniform(-1, 1, shape), smooth_sigma, mode="reflect")
    for d in (dy, dx):
        peak = np.abs(d).max()
        if peak > 0:
            d *= max_disp / peak
    return dy, dx


def _warp(plane: np.ndarray, dy, dx, order: int) -> np.ndarray:
    h, w = plane.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([yy + dy, xx + dx])
    return map_coordinates(plane.astype(np.float32), coords, order=order, mode="reflect")


def augment(sample: SliceSample, rng: np.random.Generator,
            cfg: AugmentConfig | None = None) -> SliceSample:
    cfg = cfg or AugmentConfig()
    img = sample.image.copy()
    prev = sample.prev_mask.copy()
    gt = sample.gt_mask.copy()

    k = int(rng.integers(0, 4)) if cfg.rot90 else 0
    flip_h = bool(rng.random() < cfg.flip_prob)
    flip_v = bool(rng.random() < cfg.flip_prob)

    def geom(stack):
        out = np.rot90(stack, k, axes=(-2, -1))
        if flip_h:
            out = out[..., ::-1]
        if flip_v:
            out = out[..., ::-1, :]
        return np.ascontiguousarray(out)

    img, prev, gt = geom(img), geom(prev), geom(gt)

    if cfg.elastic_max_disp > 0 and rng.random() < cfg.elastic_prob:
        dy, dx = _elastic_fields(img.shape[-2:], cfg.elastic_max_disp,
                                 cfg.elastic_smooth_sigma, rng)
        img = np.stack([_warp(p, dy, dx, order=1) for p in img])
        prev = np.stack([_warp(p, dy, dx, order=0) for p in prev])
        gt = np.stack([_warp(p, dy, dx, order=0) for p in gt])

    if cfg.brightness > 0:
        img = img + rng.uniform(-cfg.brightness, cfg.brightness)
    if cfg.contrast > 0:
        img = img * (1.0 + rng.uniform(-cfg.contrast, cfg.contrast))
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)

    prev = (prev > 0.5).astype(np.uint8)
    gt = (gt > 0.5).astype(np.uint8)
    return SliceSample(
        image=img.astype(np.float32),
        prev_mask=prev,
        gt_mask=gt,
        presence=gt.reshape(gt.shape[0], -1).any(axis=1),
        slice_index=sample.slice_index,
        subject_id=sample.subject_id,
    )


def sample_rng(global_seed: int, epoch: int, subject_id: str, slice_index: int
               ) -> np.random.Generator:
    """Deterministic per-sample stream derived from (seed, epoch, subject, slice)."""
    subject_tag = int.from_bytes(subject_id.encode()[:8].ljust(8, b"\0"), "little")
    ss = np.random.SeedSequence([global_seed, epoch, subject_tag, slice_index])
    return np.random.default_rng(ss)
