"""Intensity normalization: per-slice min-max to [0, 1], then standardization
with dataset-level statistics computed once over the training split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .volume import VolumeRecord


@dataclass
class NormStats:
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["mean"]), float(d["std"]))


def minmax_slice(plane: np.ndarray, slice_label: str = "?") -> np.ndarray:
    """Scale one slice to [0, 1]; a constant slice maps to all zeros."""
    if not np.isfinite(plane).all():
        raise DataError(f"non-finite intensities in slice {slice_label}")
    lo = plane.min()
    hi = plane.max()
    if hi == lo:
        return np.zeros_like(plane, dtype=np.float32)
    return ((plane - lo) / (hi - lo)).astype(np.float32)


def minmax_volume(image: np.ndarray, subject_id: str = "?") -> np.ndarray:
    return np.stack([minmax_slice(image[z], f"{subject_id}[{z}]")
                     for z in range(image.shape[0])])


def compute_stats(volumes: list[VolumeRecord]) -> NormStats:
    """Mean/std of the min-max scaled training intensities."""
    if not volumes:
        raise DataError("cannot compute normalization stats from an empty split")
    total, total_sq, count = 0.0, 0.0, 0
    for vol in volumes:
        scaled = minmax_volume(vol.image, vol.subject_id).astype(np.float64)
        total += scaled.sum()
        total_sq += (scaled ** 2).sum()
        count += scaled.size
    mean = total / count
    var = max(total_sq / count - mean ** 2, 0.0)
    std = float(np.sqrt(var))
    if std == 0.0:
        std = 1.0
    return NormStats(mean=float(mean), std=std)


def normalize_volume(volume: VolumeRecord, stats: NormStats) -> VolumeRecord:
    scaled = minmax_volume(volume.image, volume.subject_id)
    image = ((scaled - stats.mean) / stats.std).astype(np.float32)
    return VolumeRecord(image=image, masks=volume.masks, spacing=volume.spacing,
                        subject_id=volume.subject_id, class_names=volume.class_names)
