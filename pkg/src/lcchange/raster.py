"""In-memory rasters, the LCRT binary tile format, and palette PNG rendering.

LCRT layout (all integers little-endian)::

    offset  size  field
    0       4     magic "LCRT"
    4       2     version (1)
    6       4     width
    10      4     height
    14      2     bands
    16      1     dtype (0 = u8, 1 = f32)
    17      1     scheme tag
    18      14    reserved, zero
    32      ...   payload, band-sequential, row-major

Scheme tags: 0 raw imagery, 1 NLCD ids (0-14), 2 target ids (0-3),
3 change codes (0-8), 4 mask (0/1, 1 = valid).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from lcchange.errors import (
    BadMagicError,
    DataError,
    InvalidClassIdError,
    IoFailureError,
    MissingPaletteEntryError,
    OversizeDimensionError,
    SchemeDtypeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"LCRT"
VERSION = 1
HEADER = struct.Struct("<4sHIIHBB14s")
HEADER_SIZE = HEADER.size
MAX_DIM = 2**20

U8 = 0
F32 = 1
_NUMPY_DTYPES = {U8: np.dtype("u1"), F32: np.dtype("<f4")}

RAW, NLCD, TARGET, CHANGE, MASK = 0, 1, 2, 3, 4
# exclusive upper bound of valid ids per scheme tag
SCHEME_ID_LIMIT = {NLCD: 15, TARGET: 4, CHANGE: 9, MASK: 2}

assert HEADER_SIZE == 32


@dataclass(frozen=True, eq=False)
class Raster:
    """A ``bands x height x width`` grid of u8 or f32 samples.

    ``data`` is stored band-sequential, matching the on-disk payload order.
    The array is made read-only on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise DataError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
        if arr.dtype == np.uint8:
            arr = np.array(arr, order="C")
        elif arr.dtype in (np.float32, np.float64):
            arr = np.array(arr, dtype=np.float32, order="C")
        else:
            raise DataError(f"unsupported raster dtype {arr.dtype}")
        if min(arr.shape) < 1:
            raise DataError(f"raster dimensions must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> int:
        return U8 if self.data.dtype == np.uint8 else F32

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def band(self, i: int = 0) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        kind = "u8" if self.dtype == U8 else "f32"
        return f"Raster({self.width}x{self.height}x{self.bands} {kind})"


def check_ids(arr: np.ndarray, scheme_tag: int) -> None:
    limit = SCHEME_ID_LIMIT.get(scheme_tag)
    if limit is None:
        return
    if arr.size and int(arr.max()) >= limit:
        bad = int(arr[arr >= limit].flat[0])
        raise InvalidClassIdError(f"id {bad} invalid for scheme tag {scheme_tag} (ids 0-{limit - 1})")


def encode_tile(r: Raster, scheme_tag: int) -> bytes:
    if scheme_tag not in (RAW, NLCD, TARGET, CHANGE, MASK):
        raise DataError(f"unknown scheme tag {scheme_tag}")
    if scheme_tag != RAW and r.dtype != U8:
        raise SchemeDtypeMismatchError(f"scheme tag {scheme_tag} requires a u8 raster")
    if r.width > MAX_DIM or r.height > MAX_DIM:
        raise OversizeDimensionError(f"{r.width}x{r.height} exceeds {MAX_DIM}")
    check_ids(r.data, scheme_tag)
    header = HEADER.pack(MAGIC, VERSION, r.width, r.height, r.bands, r.dtype, scheme_tag, bytes(14))
    payload = r.data.astype(_NUMPY_DTYPES[r.dtype], copy=False).tobytes()
    return header + payload


def decode_tile(buf: bytes) -> tuple[Raster, int]:
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayloadError(f"need at least {HEADER_SIZE} header bytes, got {len(buf)}")
    magic, version, width, height, bands, dtype, tag, _ = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported LCRT version {version}")
    if dtype not in _NUMPY_DTYPES:
        raise DataError(f"unknown dtype code {dtype}")
    if tag not in (RAW, NLCD, TARGET, CHANGE, MASK):
        raise DataError(f"unknown scheme tag {tag}")
    if tag != RAW and dtype != U8:
        raise SchemeDtypeMismatchError(f"scheme tag {tag} requires u8 payload")
    if min(width, height, bands) < 1:
        raise DataError("zero dimension in header")
    npdt = _NUMPY_DTYPES[dtype]
    expected = HEADER_SIZE + width * height * bands * npdt.itemsize
    if len(buf) < expected:
        raise TruncatedPayloadError(f"payload truncated: {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise DataError(f"{len(buf) - expected} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=npdt, offset=HEADER_SIZE).reshape(bands, height, width)
    if dtype == F32:
        arr = arr.astype(np.float32)
    check_ids(arr, tag)
    return Raster(arr), tag


def write_tile(path, r: Raster, scheme_tag: int) -> None:
    buf = encode_tile(r, scheme_tag)
    try:
        Path(path).write_bytes(buf)
    except OSError as e:
        raise IoFailureError(str(e)) from e


def read_tile(path) -> tuple[Raster, int]:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailureError(str(e)) from e
    return decode_tile(buf)


def colorize(ids: np.ndarray, palette: Mapping[int, tuple[int, int, int]]) -> np.ndarray:
    """Map a 2-D id grid to an ``(h, w, 3)`` uint8 RGB image."""
    present = np.unique(ids)
    missing = [int(i) for i in present if int(i) not in palette]
    if missing:
        raise MissingPaletteEntryError(f"no palette entry for ids {missing}")
    lut = np.zeros((256, 3), dtype=np.uint8)
    for k, rgb in palette.items():
        if 0 <= k < 256:
            lut[k] = rgb
    return lut[ids]


def render_png(r: Raster, palette: Mapping[int, tuple[int, int, int]], out) -> None:
    from PIL import Image

    if r.dtype != U8 or r.bands != 1:
        raise DataError("render_png needs a single-band u8 raster")
    rgb = colorize(r.band(0), palette)
    try:
        Image.fromarray(rgb, mode="RGB").save(out, format="PNG")
    except OSError as e:
        raise IoFailureError(str(e)) from e
