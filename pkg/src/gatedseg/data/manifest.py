"""Dataset manifest: subject directories and their split assignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError
from .volume import VolumeRecord, load_volume_dir


@dataclass
class Manifest:
    root: Path
    subjects: dict[str, str]                 # subject_id -> relative directory
    splits: dict[str, list[str]] = field(default_factory=dict)  # split -> subject ids

    def split_subjects(self, split: str) -> list[str]:
        if split not in self.splits:
            raise DataError(f"split {split!r} not in manifest (have {sorted(self.splits)})")
        return list(self.splits[split])

    def load_volume(self, subject_id: str) -> VolumeRecord:
        if subject_id not in self.subjects:
            raise DataError(f"subject {subject_id!r} not in manifest")
        return load_volume_dir(self.root / self.subjects[subject_id])

    def load_split(self, split: str) -> list[VolumeRecord]:
        return [self.load_volume(s) for s in self.split_subjects(split)]


def write_manifest(path: str | Path, manifest: Manifest):
    path = Path(path)
    payload = {"subjects": manifest.subjects, "splits": manifest.splits}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    payload = json.loads(path.read_text())
    return Manifest(root=path.parent, subjects=dict(payload["subjects"]),
                    splits={k: list(v) for k, v in payload.get("splits", {}).items()})
