"""Volume container and its on-disk directory format.

A subject directory holds raw little-endian arrays plus a JSON sidecar:
    image.f32   float32 (Z, H, W)
    masks.u8    uint8   (C, Z, H, W)
    meta.json   shape, spacing, class names, and optional generator metadata
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError


@dataclass
class VolumeRecord:
    image: np.ndarray                 # (Z, H, W) float32
    masks: np.ndarray                 # (C, Z, H, W) uint8 in {0, 1}
    spacing: tuple[float, float, float]
    subject_id: str
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.image.ndim != 3:
            raise DataError(f"image must be 3D (Z, H, W), got {self.image.shape}")
        if self.masks.ndim != 4:
            raise DataError(f"masks must be 4D (C, Z, H, W), got {self.masks.shape}")
        if self.masks.shape[1:] != self.image.shape:
            raise DataError(
                f"masks {self.masks.shape[1:]} and image {self.image.shape} disagree on (Z, H, W)"
            )
        vals = np.unique(self.masks)
        if not np.isin(vals, (0, 1)).all():
            raise DataError(f"masks must be binary, found values {vals[:10]}")

    @property
    def num_classes(self) -> int:
        return self.masks.shape[0]

    @property
    def num_slices(self) -> int:
        return self.image.shape[0]


def save_volume_dir(directory: str | Path, volume: VolumeRecord, extra_meta: dict | None = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image = np.ascontiguousarray(volume.image, dtype="<f4")
    masks = np.ascontiguousarray(volume.masks, dtype=np.uint8)
    (directory / "image.f32").write_bytes(image.tobytes())
    (directory / "masks.u8").write_bytes(masks.tobytes())
    meta = {
        "subject_id": volume.subject_id,
        "image_shape": list(volume.image.shape),
        "num_classes": volume.num_classes,
        "spacing": list(volume.spacing),
        "class_names": volume.class_names,
    }
    if extra_meta:
        meta.update(extra_meta)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_volume_dir(directory: str | Path) -> VolumeRecord:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no meta.json in volume directory {directory}")
    meta = json.loads(meta_path.read_text())
    z, h, w = meta["image_shape"]
    c = meta["num_classes"]
    image = np.frombuffer((directory / "image.f32").read_bytes(), dtype="<f4")
    masks = np.frombuffer((directory / "masks.u8").read_bytes(), dtype=np.uint8)
    if image.size != z * h * w:
        raise DataError(f"image.f32 in {directory} has {image.size} values, expected {z * h * w}")
    if masks.size != c * z * h * w:
        raise DataError(f"masks.u8 in {directory} has {masks.size} values, expected {c * z * h * w}")
    return VolumeRecord(
        image=image.reshape(z, h, w).copy(),
        masks=masks.reshape(c, z, h, w).copy(),
        spacing=tuple(meta["spacing"]),
        subject_id=meta["subject_id"],
        class_names=list(meta.get("class_names", [])),
    )
