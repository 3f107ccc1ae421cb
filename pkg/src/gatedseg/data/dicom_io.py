"""CT series and RT Structure Set ingestion (and the writers used to build
synthetic fixtures and round-trip tests)."""

from __future__ import annotations

import logging
import struct as _struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IngestionError
from . import dicom_format as dcm
from .rasterize import contours_to_mask
from .volume import VolumeRecord

log = logging.getLogger(__name__)

_T = {
    "sop_class": (0x0008, 0x0016),
    "sop_instance": (0x0008, 0x0018),
    "modality": (0x0008, 0x0060),
    "study_uid": (0x0020, 0x000D),
    "series_uid": (0x0020, 0x000E),
    "instance_number": (0x0020, 0x0013),
    "position": (0x0020, 0x0032),
    "orientation": (0x0020, 0x0037),
    "frame_uid": (0x0020, 0x0052),
    "samples_per_pixel": (0x0028, 0x0002),
    "photometric": (0x0028, 0x0004),
    "rows": (0x0028, 0x0010),
    "cols": (0x0028, 0x0011),
    "pixel_spacing": (0x0028, 0x0030),
    "bits_allocated": (0x0028, 0x0100),
    "bits_stored": (0x0028, 0x0101),
    "high_bit": (0x0028, 0x0102),
    "pixel_representation": (0x0028, 0x0103),
    "intercept": (0x0028, 0x1052),
    "slope": (0x0028, 0x1053),
    "pixel_data": (0x7FE0, 0x0010),
    "ref_frame_seq": (0x3006, 0x0010),
    "roi_seq": (0x3006, 0x0020),
    "roi_number": (0x3006, 0x0022),
    "roi_frame_uid": (0x3006, 0x0024),
    "roi_name": (0x3006, 0x0026),
    "roi_contour_seq": (0x3006, 0x0039),
    "contour_seq": (0x3006, 0x0040),
    "contour_type": (0x3006, 0x0042),
    "contour_npoints": (0x3006, 0x0046),
    "contour_data": (0x3006, 0x0050),
    "ref_roi_number": (0x3006, 0x0084),
}


@dataclass
class CTGeometry:
    """Geometry needed to map patient coordinates onto the voxel grid."""

    origin: tuple[float, float, float]     # first-slice ImagePositionPatient (x, y, z)
    slice_positions: list[float]           # z per sorted slice
    pixel_spacing: tuple[float, float]     # (row, col) mm
    frame_uid: str
    shape: tuple[int, int, int]            # (Z, H, W)


def _uid(seed: str) -> str:
    digits = "".join(str(b % 10) for b in seed.encode())[:24]
    return f"2.25.{digits or '0'}"


def write_ct_series(directory: str | Path, image: np.ndarray,
                    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
                    origin: tuple[float, float, float] = (0.0, 0.0, 0.0),
                    slope: float = 1.0, intercept: float = 0.0,
                    series_uid: str | None = None, frame_uid: str | None = None,
                    shuffle_filenames: bool = False) -> tuple[str, str]:
    """Write an int16 axial CT series, one file per slice.

    `image` holds the STORED values; a reader applies value*slope + intercept.
    Returns (series_uid, frame_of_reference_uid).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image)
    if image.ndim != 3:
        raise IngestionError(f"CT image must be 3D (Z, H, W), got {image.shape}")
    stored = image.astype("<i2")
    if not np.array_equal(stored.astype(image.dtype), image):
        raise IngestionError("CT stored values must fit int16")
    series_uid = series_uid or _uid(f"series-{directory.name}")
    frame_uid = frame_uid or _uid(f"frame-{directory.name}")
    study_uid = _uid(f"study-{directory.name}")
    zdim, h, w = stored.shape
    sz, sy, sx = spacing
    file_order = list(range(zdim))
    if shuffle_filenames:
        file_order = file_order[::-1]
    s = dcm.encode_string
    for file_idx, z in enumerate(file_order):
        sop_uid = _uid(f"{series_uid}-{z}")
        elements = [
            dcm.Element(_T["sop_class"], "UI", s("UI", dcm.UID_CT_IMAGE)),
            dcm.Element(_T["sop_instance"], "UI", s("UI", sop_uid)),
            dcm.Element(_T["modality"], "CS", s("CS", "CT")),
            dcm.Element(_T["study_uid"], "UI", s("UI", study_uid)),
            dcm.Element(_T["series_uid"], "UI", s("UI", series_uid)),
            dcm.Element(_T["instance_number"], "IS", s("IS", str(z + 1))),
            dcm.Element(_T["position"], "DS",
                        s("DS", f"{origin[0]}\\{origin[1]}\\{origin[2] + z * sz}")),
            dcm.Element(_T["orientation"], "DS", s("DS", "1\\0\\0\\0\\1\\0")),
            dcm.Element(_T["frame_uid"], "UI", s("UI", frame_uid)),
            dcm.Element(_T["samples_per_pixel"], "US", _struct.pack("<H", 1)),
            dcm.Element(_T["photometric"], "CS", s("CS", "MONOCHROME2")),
            dcm.Element(_T["rows"], "US", _struct.pack("<H", h)),
            dcm.Element(_T["cols"], "US", _struct.pack("<H", w)),
            dcm.Element(_T["pixel_spacing"], "DS", s("DS", f"{sy}\\{sx}")),
            dcm.Element(_T["bits_allocated"], "US", _struct.pack("<H", 16)),
            dcm.Element(_T["bits_stored"], "US", _struct.pack("<H", 16)),
            dcm.Element(_T["high_bit"], "US", _struct.pack("<H", 15)),
            dcm.Element(_T["pixel_representation"], "US", _struct.pack("<H", 1)),
            dcm.Element(_T["intercept"], "DS", s("DS", str(intercept))),
            dcm.Element(_T["slope"], "DS", s("DS", str(slope))),
            dcm.Element(_T["pixel_data"], "OW", stored[z].tobytes()),
        ]
        dcm.write_file(directory / f"ct{file_idx:04d}.dcm", elements,
                       dcm.UID_CT_IMAGE, sop_uid)
    return series_uid, frame_uid


def load_ct_series(directory: str | Path) -> tuple[VolumeRecord, CTGeometry]:
    """Read one CT series: slices sorted ascending by position along the
    normal axis, rescale slope/intercept applied."""
    directory = Path(directory)
    files = sorted(directory.glob("*.dcm"))
    if not files:
        raise IngestionError(f"no .dcm files in {directory}")
    slices = []
    for path in files:
        ds = dcm.read_file(path)
        if dcm.get_string(ds, _T["modality"]) != "CT":
            continue
        slices.append((path, ds))
    if not slices:
        raise IngestionError(f"no CT slices in {directory}")

    series_uids = {dcm.get_string(ds, _T["series_uid"]) for _, ds in slices}
    if len(series_uids) != 1:
        raise IngestionError(
            f"mixed series in {directory}: {sorted(series_uids)} over files "
            f"{[p.name for p, _ in slices]}"
        )
    numbers = [dcm.get_int(ds, _T["instance_number"]) for _, ds in slices]
    if None in numbers:
        missing = [p.name for (p, ds), n in zip(slices, numbers) if n is None]
        raise IngestionError(f"missing instance numbers in files {missing}")
    if len(set(numbers)) != len(numbers):
        dupes = sorted({n for n in numbers if numbers.count(n) > 1})
        raise IngestionError(
            f"duplicate instance numbers {dupes} in files {[p.name for p, _ in slices]}"
        )

    def z_of(ds):
        pos = dcm.get_floats(ds, _T["position"])
        if len(pos) != 3:
            raise IngestionError("slice missing ImagePositionPatient")
        return pos[2]

    slices.sort(key=lambda pair: z_of(pair[1]))
    planes, positions = [], []
    first = slices[0][1]
    h = dcm.get_int(first, _T["rows"])
    w = dcm.get_int(first, _T["cols"])
    spacing_rc = dcm.get_floats(first, _T["pixel_spacing"])
    frame_uid = dcm.get_string(first, _T["frame_uid"]) or ""
    origin = tuple(dcm.get_floats(first, _T["position"]))
    for path, ds in slices:
        slope = dcm.get_floats(ds, _T["slope"]) or [1.0]
        intercept = dcm.get_floats(ds, _T["intercept"]) or [0.0]
        raw = np.frombuffer(ds[_T["pixel_data"]].value, dtype="<i2").reshape(h, w)
        planes.append(raw.astype(np.float32) * slope[0] + intercept[0])
        positions.append(z_of(ds))
    image = np.stack(planes)
    dz = positions[1] - positions[0] if len(positions) > 1 else 1.0
    volume = VolumeRecord(
        image=image,
        masks=np.zeros((0,) + image.shape, dtype=np.uint8),
        spacing=(float(dz), float(spacing_rc[0]), float(spacing_rc[1])),
        subject_id=directory.name,
    )
    geometry = CTGeometry(origin=origin, slice_positions=positions,
                          pixel_spacing=(spacing_rc[0], spacing_rc[1]),
                          frame_uid=frame_uid, shape=image.shape)
    return volume, geometry


def write_rtstruct(path: str | Path, rois: list[tuple[str, list[tuple[float, np.ndarray]]]],
                   frame_uid: str):
    """Write a structure set. rois: [(name, [(z_mm, (N, 2) xy_mm), ...]), ...]."""
    s = dcm.encode_string
    sop_uid = _uid(f"rtstruct-{Path(path).name}")
    roi_items, contour_items = [], []
    for idx, (name, contours) in enumerate(rois, start=1):
        roi_items.append({
            _T["roi_number"]: dcm.Element(_T["roi_number"], "IS", s("IS", str(idx))),
            _T["roi_frame_uid"]: dcm.Element(_T["roi_frame_uid"], "UI", s("UI", frame_uid)),
            _T["roi_name"]: dcm.Element(_T["roi_name"], "LO", s("LO", name)),
        })
        seq = []
        for z_mm, xy in contours:
            xy = np.asarray(xy, dtype=float)
            triples = "\\".join(f"{x:.6g}\\{y:.6g}\\{z_mm:.6g}" for x, y in xy)
            seq.append({
                _T["contour_type"]: dcm.Element(_T["contour_type"], "CS",
                                                s("CS", "CLOSED_PLANAR")),
                _T["contour_npoints"]: dcm.Element(_T["contour_npoints"], "IS",
                                                   s("IS", str(len(xy)))),
                _T["contour_data"]: dcm.Element(_T["contour_data"], "DS", s("DS", triples)),
            })
        contour_items.append({
            _T["ref_roi_number"]: dcm.Element(_T["ref_roi_number"], "IS", s("IS", str(idx))),
            _T["contour_seq"]: dcm.Element(_T["contour_seq"], "SQ", seq),
        })
    elements = [
        dcm.Element(_T["sop_class"], "UI", s("UI", dcm.UID_RTSTRUCT)),
        dcm.Element(_T["sop_instance"], "UI", s("UI", sop_uid)),
        dcm.Element(_T["modality"], "CS", s("CS", "RTSTRUCT")),
        dcm.Element(_T["ref_frame_seq"], "SQ",
                    [{_T["frame_uid"]: dcm.Element(_T["frame_uid"], "UI", s("UI", frame_uid))}]),
        dcm.Element(_T["roi_seq"], "SQ",
                    [dict(item) for item in roi_items]),
        dcm.Element(_T["roi_contour_seq"], "SQ",
                    [dict(item) for item in contour_items]),
    ]
    dcm.write_file(path, elements, dcm.UID_RTSTRUCT, sop_uid)


def rtstruct_to_masks(path: str | Path, geometry: CTGeometry,
                      class_names: list[str]) -> np.ndarray:
    """Rasterize named structures onto the CT grid.

    Planar contours are filled by even-odd parity on pixel centers; multiple
    contours on one slice combine by parity, so nested contours make rings.
    A named structure missing from the file yields an empty channel and a
    warning; a frame-of-reference mismatch is an ingestion error.
    """
    ds = dcm.read_file(path)
    ref_items = dcm.get_sequence(ds, _T["ref_frame_seq"])
    file_frames = {dcm.get_string(item, _T["frame_uid"]) for item in ref_items}
    roi_items = dcm.get_sequence(ds, _T["roi_seq"])
    for item in roi_items:
        roi_frame = dcm.get_string(item, _T["roi_frame_uid"])
        if roi_frame:
            file_frames.add(roi_frame)
    known_frames = {f for f in file_frames if f}
    if known_frames and geometry.frame_uid not in known_frames:
        raise IngestionError(
            f"structure set frame of reference {sorted(known_frames)} does not match "
            f"CT frame {geometry.frame_uid!r}"
        )

    name_by_number = {
        dcm.get_int(item, _T["roi_number"]): dcm.get_string(item, _T["roi_name"])
        for item in roi_items
    }
    contours_by_name: dict[str, dict[int, list[np.ndarray]]] = {}
    zdim, h, w = geometry.shape
    positions = np.asarray(geometry.slice_positions)
    dz = abs(positions[1] - positions[0]) if zdim > 1 else 1.0
    sy, sx = geometry.pixel_spacing
    ox, oy, _ = geometry.origin

    for item in dcm.get_sequence(ds, _T["roi_contour_seq"]):
        name = name_by_number.get(dcm.get_int(item, _T["ref_roi_number"]))
        if name is None:
            continue
        per_slice = contours_by_name.setdefault(name, {})
        for contour in dcm.get_sequence(item, _T["contour_seq"]):
            data = dcm.get_floats(contour, _T["contour_data"])
            pts = np.asarray(data, dtype=float).reshape(-1, 3)
            z_mm = pts[:, 2].mean()
            zi = int(np.argmin(np.abs(positions - z_mm)))
            if abs(positions[zi] - z_mm) > 0.5 * dz + 1e-6:
                continue  # contour plane outside the imaged extent
            # patient mm -> pixel coordinates (x=col, y=row)
            xy = np.stack([(pts[:, 0] - ox) / sx, (pts[:, 1] - oy) / sy], axis=1)
            per_slice.setdefault(zi, []).append(xy)

    masks = np.zeros((len(class_names), zdim, h, w), dtype=np.uint8)
    for ci, name in enumerate(class_names):
        if name not in contours_by_name:
            log.warning("structure %r not found in %s; channel left empty", name, path)
            continue
        for zi, polys in contours_by_name[name].items():
            masks[ci, zi] = contours_to_mask(polys, (h, w)).astype(np.uint8)
    return masks
