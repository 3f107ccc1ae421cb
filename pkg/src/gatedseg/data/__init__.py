from .volume import VolumeRecord, load_volume_dir, save_volume_dir
from .phantom import EllipsoidSpec, PhantomSpec, default_phantom_spec, generate_phantom
from .samples import SliceSample, build_slice_samples
from .manifest import Manifest, write_manifest, read_manifest

__all__ = [
    "VolumeRecord",
    "load_volume_dir",
    "save_volume_dir",
    "EllipsoidSpec",
    "PhantomSpec",
    "default_phantom_spec",
    "generate_phantom",
    "SliceSample",
    "build_slice_samples",
    "Manifest",
    "write_manifest",
    "read_manifest",
]
