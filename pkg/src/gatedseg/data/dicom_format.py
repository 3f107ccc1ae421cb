"""Minimal DICOM encoder/decoder (explicit VR little endian only).

Covers just the subset needed to write and re-read CT image slices and RT
Structure Set files: scalar VRs, string VRs and defined/undefined-length
sequences. Not a general DICOM implementation.
"""

from __future__ import annotations

import struct
from io import BytesIO

from ..errors import IngestionError

TRANSFER_SYNTAX_EXPLICIT_LE = "1.2.840.10008.1.2.1"
UID_CT_IMAGE = "1.2.840.10008.5.1.4.1.1.2"
UID_RTSTRUCT = "1.2.840.10008.5.1.4.1.1.481.3"

# VRs that use the 4-byte length form (2 reserved bytes after the VR code)
_LONG_VRS = {"OB", "OW", "OF", "SQ", "UT", "UN"}
_STRING_VRS = {"UI", "LO", "SH", "CS", "DS", "IS", "DA", "TM", "PN", "AE", "ST", "LT"}

ITEM_TAG = (0xFFFE, 0xE000)
ITEM_DELIM_TAG = (0xFFFE, 0xE00D)
SEQ_DELIM_TAG = (0xFFFE, 0xE0DD)


class Element:
    __slots__ = ("tag", "vr", "value")

    def __init__(self, tag: tuple[int, int], vr: str, value):
        self.tag = tag
        self.vr = vr
        self.value = value  # bytes for scalars/strings, list[dict] for SQ

    def __repr__(self):
        return f"Element({self.tag[0]:04X},{self.tag[1]:04X} {self.vr})"


def _pad(data: bytes, pad_byte: bytes) -> bytes:
    return data + pad_byte if len(data) % 2 else data


def encode_string(vr: str, text: str) -> bytes:
    return _pad(text.encode("ascii"), b"\x00" if vr == "UI" else b" ")


def _encode_element(tag: tuple[int, int], vr: str, payload: bytes) -> bytes:
    head = struct.pack("<HH", *tag) + vr.encode("ascii")
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(payload)) + payload
    if len(payload) > 0xFFFF:
        raise IngestionError(f"element {tag} too long for short VR {vr}")
    return head + struct.pack("<H", len(payload)) + payload


def encode_dataset(elements) -> bytes:
    """Encode a dataset given as a list of Elements or a tag->Element dict
    (the form produced by the parser and used for sequence items)."""
    if isinstance(elements, dict):
        elements = list(elements.values())
    out = BytesIO()
    for el in sorted(elements, key=lambda e: e.tag):
        if el.vr == "SQ":
            payload = b""
            for item in el.value:
                body = encode_dataset(item)
                payload += struct.pack("<HH", *ITEM_TAG) + struct.pack("<I", len(body)) + body
        elif isinstance(el.value, bytes):
            payload = el.value
        else:
            raise IngestionError(f"unencodable value for {el}")
        out.write(_encode_element(el.tag, el.vr, payload))
    return out.getvalue()


def write_file(path, elements: list[Element], sop_class_uid: str, sop_instance_uid: str):
    """Write a DICOM part-10 file with a minimal file meta group."""
    meta_elements = [
        Element((0x0002, 0x0002), "UI", encode_string("UI", sop_class_uid)),
        Element((0x0002, 0x0003), "UI", encode_string("UI", sop_instance_uid)),
        Element((0x0002, 0x0010), "UI", encode_string("UI", TRANSFER_SYNTAX_EXPLICIT_LE)),
    ]
    meta_body = encode_dataset(meta_elements)
    group_len = Element((0x0002, 0x0000), "UL", struct.pack("<I", len(meta_body)))
    with open(path, "wb") as f:
        f.write(b"\x00" * 128 + b"DICM")
        f.write(encode_dataset([group_len]) + meta_body)
        f.write(encode_dataset(elements))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IngestionError("truncated DICOM stream")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def peek_tag(self) -> tuple[int, int]:
        g, e = struct.unpack_from("<HH", self.data, self.pos)
        return (g, e)

    def read_tag(self) -> tuple[int, int]:
        g, e = struct.unpack("<HH", self.read(4))
        return (g, e)


def _parse_sequence(r: _Reader, length: int) -> list[dict]:
    items = []
    end = None if length == 0xFFFFFFFF else r.pos + length
    while True:
        if end is not None and r.pos >= end:
            break
        if r.eof():
            if end is None:
                raise IngestionError("unterminated sequence")
            break
        tag = r.read_tag()
        if tag == SEQ_DELIM_TAG:
            r.read(4)
            break
        if tag != ITEM_TAG:
            raise IngestionError(f"expected sequence item, got ({tag[0]:04X},{tag[1]:04X})")
        item_len = struct.unpack("<I", r.read(4))[0]
        if item_len == 0xFFFFFFFF:
            item = _parse_dataset(r, stop_at_item_delim=True)
        else:
            item = parse_dataset(r.read(item_len))
        items.append(item)
    return items


def _parse_dataset(r: _Reader, stop_at_item_delim: bool = False,
                   stop_before_group: int | None = None) -> dict:
    ds: dict[tuple[int, int], Element] = {}
    while not r.eof():
        if stop_before_group is not None and r.peek_tag()[0] >= stop_before_group:
            break
        tag = r.read_tag()
        if stop_at_item_delim and tag == ITEM_DELIM_TAG:
            r.read(4)
            break
        vr = r.read(2).decode("ascii")
        if vr in _LONG_VRS:
            r.read(2)
            length = struct.unpack("<I", r.read(4))[0]
        else:
            length = struct.unpack("<H", r.read(2))[0]
        if vr == "SQ":
            ds[tag] = Element(tag, vr, _parse_sequence(r, length))
        else:
            if length == 0xFFFFFFFF:
                raise IngestionError(f"undefined length on non-SQ element {tag}")
            ds[tag] = Element(tag, vr, r.read(length))
    return ds


def parse_dataset(data: bytes) -> dict:
    return _parse_dataset(_Reader(data))


def read_file(path) -> dict:
    """Parse a part-10 file; returns the main dataset (file meta validated)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 132 or blob[128:132] != b"DICM":
        raise IngestionError(f"{path} is not a DICOM part-10 file")
    r = _Reader(blob)
    r.pos = 132
    meta = _parse_dataset(r, stop_before_group=0x0003)
    ts = get_string(meta, (0x0002, 0x0010))
    if ts != TRANSFER_SYNTAX_EXPLICIT_LE:
        raise IngestionError(f"{path}: unsupported transfer syntax {ts!r}")
    return _parse_dataset(r)


# -- typed accessors ---------------------------------------------------------

def get_string(ds: dict, tag: tuple[int, int], default: str | None = None) -> str | None:
    el = ds.get(tag)
    if el is None:
        return default
    return el.value.decode("ascii").rstrip(" \x00")


def get_floats(ds: dict, tag: tuple[int, int]) -> list[float]:
    s = get_string(ds, tag)
    if s is None or s == "":
        return []
    return [float(part) for part in s.split("\\")]


def get_int(ds: dict, tag: tuple[int, int], default: int | None = None) -> int | None:
    el = ds.get(tag)
    if el is None:
        return default
    if el.vr == "US":
        return struct.unpack("<H", el.value)[0]
    if el.vr == "UL":
        return struct.unpack("<I", el.value)[0]
    return int(get_string(ds, tag))


def get_sequence(ds: dict, tag: tuple[int, int]) -> list[dict]:
    el = ds.get(tag)
    if el is None:
        return []
    if el.vr != "SQ":
        raise IngestionError(f"element ({tag[0]:04X},{tag[1]:04X}) is not a sequence")
    return el.value
