"""Slice-sample construction: one 2D slice plus previous-mask context."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .volume import VolumeRecord


@dataclass
class SliceSample:
    image: np.ndarray      # (1, H, W) float32
    prev_mask: np.ndarray  # (C, H, W) uint8, context channel
    gt_mask: np.ndarray    # (C, H, W) uint8
    presence: np.ndarray   # (C,) bool
    slice_index: int
    subject_id: str


def build_slice_samples(volume: VolumeRecord, context_source: str = "ground_truth"
                        ) -> list[SliceSample]:
    """Slice a volume in z order.

    ground_truth: prev_mask of slice z is the ground-truth mask of z-1
    (teacher forcing); zeros: all context channels are empty. Slice 0 always
    gets an all-zero context.
    """
    if context_source not in ("ground_truth", "zeros"):
        raise DataError(f"unknown context_source {context_source!r}")
    samples = []
    c, zdim = volume.masks.shape[0], volume.num_slices
    zero_ctx = np.zeros((c,) + volume.image.shape[1:], dtype=np.uint8)
    for z in range(zdim):
        if z == 0 or context_source == "zeros":
            prev = zero_ctx.copy()
        else:
            prev = volume.masks[:, z - 1].copy()
        gt = volume.masks[:, z].copy()
        samples.append(
            SliceSample(
                image=volume.image[z][None].astype(np.float32),
                prev_mask=prev,
                gt_mask=gt,
                presence=gt.reshape(c, -1).any(axis=1),
                slice_index=z,
                subject_id=volume.subject_id,
            )
        )
    return samples
