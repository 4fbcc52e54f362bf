"""Bit-exact file formats: SEGB masks, indexed/colorized PNG, SEGF score
maps, SEGL logit maps, SEGW checkpoints are defined alongside the model.

All multi-byte integers are little-endian. SEGB/SEGF/SEGL share the same
16-byte header layout: 4-byte magic, u32 version, u32 width, u32 height.
"""

from __future__ import annotations

import hashlib
import io
import struct

import numpy as np
from PIL import Image

from segcritic import errors
from segcritic.core import (
    DEFAULT_TAXONOMY,
    NUM_CLASSES,
    ClassTaxonomy,
    ImageRaster,
    LogitMap,
    SegmentationMask,
)

MASK_MAGIC = b"SEGB"
SCORE_MAGIC = b"SEGF"
LOGIT_MAGIC = b"SEGL"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIII")


def _read_header(data: bytes, magic: bytes) -> tuple[int, int]:
    if len(data) < _HEADER.size:
        raise errors.TruncatedPayload(f"{len(data)} bytes is shorter than the header")
    got, version, width, height = _HEADER.unpack_from(data)
    if got != magic:
        raise errors.BadMagic(f"expected {magic!r}, got {got!r}")
    if version != FORMAT_VERSION:
        raise errors.BadMagic(f"unsupported version {version}")
    if width < 1 or height < 1:
        raise errors.TruncatedPayload("zero image dimension in header")
    return width, height


def encode_bin(mask: SegmentationMask) -> bytes:
    header = _HEADER.pack(MASK_MAGIC, FORMAT_VERSION, mask.width, mask.height)
    return header + mask.labels.tobytes()


def decode_bin(data: bytes) -> SegmentationMask:
    width, height = _read_header(data, MASK_MAGIC)
    payload = data[_HEADER.size :]
    if len(payload) != width * height:
        raise errors.TruncatedPayload(
            f"payload is {len(payload)} bytes, expected {width * height}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if labels.max(initial=0) >= NUM_CLASSES:
        raise errors.LabelOutOfRange(f"label byte {int(labels.max())} >= {NUM_CLASSES}")
    return SegmentationMask(labels)


def mask_digest(mask: SegmentationMask) -> str:
    """SHA-256 of the SEGB encoding; used for undo/replay verification."""
    return hashlib.sha256(encode_bin(mask)).hexdigest()


def encode_indexed_png(
    mask: SegmentationMask, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY
) -> bytes:
    img = Image.fromarray(np.asarray(mask.labels), mode="P")
    img.putpalette(taxonomy.palette_bytes())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_indexed_png(data: bytes) -> SegmentationMask:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise errors.TruncatedPayload(f"not a decodable PNG: {exc}") from exc
    if img.mode != "P":
        raise errors.WrongColorType(f"expected indexed PNG, got mode {img.mode}")
    labels = np.array(img, dtype=np.uint8)
    if labels.max(initial=0) >= NUM_CLASSES:
        raise errors.LabelOutOfRange(
            f"palette index {int(labels.max())} >= {NUM_CLASSES} in use"
        )
    return SegmentationMask(labels)


def colorize(
    mask: SegmentationMask, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY
) -> ImageRaster:
    return ImageRaster(taxonomy.colors[mask.labels])


def encode_colorized_png(
    mask: SegmentationMask, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY
) -> bytes:
    return encode_image_png(colorize(mask, taxonomy))


def encode_image_png(image: ImageRaster) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image.pixels)).save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> ImageRaster:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return ImageRaster(np.array(img, dtype=np.uint8))


def encode_scoremap(score: np.ndarray) -> bytes:
    """Score maps are (H, W) float32; used for attribution/uncertainty IO."""
    arr = np.ascontiguousarray(score, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("score map must be (H, W)")
    header = _HEADER.pack(SCORE_MAGIC, FORMAT_VERSION, arr.shape[1], arr.shape[0])
    return header + arr.tobytes()


def decode_scoremap(data: bytes) -> np.ndarray:
    width, height = _read_header(data, SCORE_MAGIC)
    payload = data[_HEADER.size :]
    if len(payload) != width * height * 4:
        raise errors.TruncatedPayload(
            f"payload is {len(payload)} bytes, expected {width * height * 4}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).copy()


def encode_logits(logits: LogitMap) -> bytes:
    arr = np.ascontiguousarray(logits.values, dtype="<f4")
    header = _HEADER.pack(LOGIT_MAGIC, FORMAT_VERSION, logits.width, logits.height)
    return header + struct.pack("<I", NUM_CLASSES) + arr.tobytes()


def decode_logits(data: bytes) -> LogitMap:
    width, height = _read_header(data, LOGIT_MAGIC)
    offset = _HEADER.size
    if len(data) < offset + 4:
        raise errors.TruncatedPayload("missing channel count")
    (channels,) = struct.unpack_from("<I", data, offset)
    if channels != NUM_CLASSES:
        raise errors.TruncatedPayload(f"expected {NUM_CLASSES} channels, got {channels}")
    payload = data[offset + 4 :]
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise errors.TruncatedPayload(f"payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return LogitMap(values.astype(np.float64))
