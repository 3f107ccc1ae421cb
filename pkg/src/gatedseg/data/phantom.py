"""Synthetic ellipsoid phantoms: a desk-scale stand-in for a CT dataset in
which every structure is absent from a controlled fraction of slices."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DataError
from .volume import VolumeRecord


@dataclass
class EllipsoidSpec:
    """Sampling ranges (in voxels) for one structure's ellipsoid."""

    name: str
    center_y: tuple[float, float]
    center_x: tuple[float, float]
    radius_y: tuple[float, float]
    radius_x: tuple[float, float]
    z_extent: tuple[int, int]      # [lo, hi) range for the slab of present slices
    contrast: float = 1.0

    def __post_init__(self):
        if self.radius_y[0] <= 0 or self.radius_x[0] <= 0:
            raise DataError(f"class {self.name}: radii must be positive")
        if self.z_extent[1] <= self.z_extent[0]:
            raise DataError(f"class {self.name}: empty z-extent range {self.z_extent}")


@dataclass
class PhantomSpec:
    volume_shape: tuple[int, int, int]  # (Z, H, W)
    classes: list[EllipsoidSpec]
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        z = self.volume_shape[0]
        for c in self.classes:
            if not (0 < c.z_extent[0] and c.z_extent[1] < z):
                raise DataError(
                    f"class {c.name}: z-extent {c.z_extent} must be strictly inside (0, {z}) "
                    "so anatomy-absent slices exist"
                )

    def to_dict(self) -> dict:
        return asdict(self)


def default_phantom_spec(volume_shape=(32, 128, 128), seed: int = 0,
                         noise_sigma: float = 0.05) -> PhantomSpec:
    """Three bright structures, each absent from >= 30% of slices."""
    z, h, w = volume_shape
    def zr(lo_frac, hi_frac):
        return (max(1, int(z * lo_frac)), min(z - 1, int(z * hi_frac)))
    classes = [
        EllipsoidSpec("prostate", (0.45 * h, 0.6 * h), (0.4 * w, 0.6 * w),
                      (0.08 * h, 0.14 * h), (0.08 * w, 0.14 * w), zr(0.25, 0.65), 0.9),
        EllipsoidSpec("bladder", (0.2 * h, 0.35 * h), (0.35 * w, 0.65 * w),
                      (0.10 * h, 0.18 * h), (0.10 * w, 0.18 * w), zr(0.35, 0.9), 0.7),
        EllipsoidSpec("rectum", (0.65 * h, 0.8 * h), (0.4 * w, 0.6 * w),
                      (0.06 * h, 0.12 * h), (0.06 * w, 0.12 * w), zr(0.1, 0.6), 0.5),
    ]
    return PhantomSpec(tuple(volume_shape), classes, noise_sigma, seed)


def _ellipsoid_mask(shape, cz, cy, cx, rz, ry, rx) -> np.ndarray:
    z, y, x = np.ogrid[: shape[0], : shape[1], : shape[2]]
    q = ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2
    return (q <= 1.0).astype(np.uint8)


def generate_phantom(spec: PhantomSpec, subject_id: str = "phantom") -> VolumeRecord:
    """Gaussian-noise background plus one brightened ellipsoid per class.

    Deterministic for a fixed spec (seed included); masks are the exact
    ellipsoid interiors, so presence flags follow each class's z-extent.
    """
    rng = np.random.default_rng(spec.seed)
    zdim, h, w = spec.volume_shape
    image = rng.normal(0.0, spec.noise_sigma, size=(zdim, h, w)).astype(np.float32)
    masks = np.zeros((len(spec.classes), zdim, h, w), dtype=np.uint8)
    for ci, cls in enumerate(spec.classes):
        z0 = int(rng.integers(cls.z_extent[0], max(cls.z_extent[0] + 1, cls.z_extent[1] - 1)))
        z1 = int(rng.integers(z0 + 2, cls.z_extent[1] + 1))
        cz, rz = (z0 + z1 - 1) / 2.0, max((z1 - z0) / 2.0, 1.0)
        cy = rng.uniform(*cls.center_y)
        cx = rng.uniform(*cls.center_x)
        ry = rng.uniform(*cls.radius_y)
        rx = rng.uniform(*cls.radius_x)
        if ry <= 0 or rx <= 0 or rz <= 0:
            raise DataError(f"class {cls.name}: degenerate radii ({rz}, {ry}, {rx})")
        mask = _ellipsoid_mask((zdim, h, w), cz, cy, cx, rz, ry, rx)
        # clip to the sampled slab so presence is exactly z0..z1-1
        mask[:z0] = 0
        mask[z1:] = 0
        masks[ci] = mask
        image += cls.contrast * mask.astype(np.float32)
    return VolumeRecord(
        image=image,
        masks=masks,
        spacing=(1.0, 1.0, 1.0),
        subject_id=subject_id,
        class_names=[c.name for c in spec.classes],
    )
