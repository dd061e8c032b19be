"""Dense image/saliency tensors, normalization and upsampling primitives,
and the raw binary file formats (TNSR, PGM/PPM) used across the toolkit.

Arithmetic is float64 in memory; files store float32 little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    MalformedHeaderError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1

# Anything above this element count is treated as a corrupt header rather
# than a legitimate tensor (2**31 floats = 8 GiB payload).
_MAX_ELEMENTS = 2**31


def _frozen(arr: np.ndarray) -> np.ndarray:
    # Always copy: freezing a view would silently make the caller's array
    # read-only too.
    out = np.array(arr, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C pixel grid with values in [0, 1], row-major, channel-last."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, C) with C in {{1, 3}}, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have H >= 1 and W >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SaliencyMap:
    """H' x W' grid of real-valued importances, row-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("saliency map must have H' >= 1 and W' >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("saliency values must be finite")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def minmax_normalize(s: SaliencyMap) -> SaliencyMap:
    """Rescale a saliency map to [0, 1] via (S - min) / (max - min).

    A constant map normalizes to all-ones so that masking an image with it
    is the identity.
    """
    arr = s.data
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return SaliencyMap(np.ones_like(arr))
    return SaliencyMap((arr - lo) / (hi - lo))


def upsample_block(s: SaliencyMap, r: int, mode: str = "nearest") -> SaliencyMap:
    """Upsample a saliency map by an integer factor r.

    The default "nearest" mode replicates each source element over its
    r x r block, matching the block partition used by the progressive
    deletion masks. A "bilinear" mode (half-pixel-center interpolation)
    is available for sensitivity studies.
    """
    if r < 1:
        raise ValueError(f"upsample factor must be >= 1, got {r}")
    if mode == "nearest":
        out = np.repeat(np.repeat(s.data, r, axis=0), r, axis=1)
        return SaliencyMap(out)
    if mode == "bilinear":
        return SaliencyMap(_bilinear_resize(s.data, s.height * r, s.width * r))
    raise ValueError(f"unknown upsample mode: {mode!r}")


def _bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-center alignment and edge clamping."""
    in_h, in_w = arr.shape
    rows = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    rows = np.clip(rows, 0.0, in_h - 1.0)
    cols = np.clip(cols, 0.0, in_w - 1.0)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = arr[np.ix_(r0, c0)] * (1 - fc) + arr[np.ix_(r0, c1)] * fc
    bot = arr[np.ix_(r1, c0)] * (1 - fc) + arr[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def infer_block_factor(image: ImageTensor, s: SaliencyMap) -> int:
    """Return the integer factor r with H = r*H' and W = r*W'.

    Rejects shape pairs that are not integer-divisible or whose row and
    column factors disagree.
    """
    from .errors import DimensionMismatchError

    h, w = image.height, image.width
    hp, wp = s.height, s.width
    if h % hp != 0 or w % wp != 0:
        raise DimensionMismatchError(
            f"image {h}x{w} is not block-divisible by map {hp}x{wp}"
        )
    r_rows = h // hp
    r_cols = w // wp
    if r_rows != r_cols:
        raise DimensionMismatchError(
            f"row factor {r_rows} != column factor {r_cols} for image {h}x{w}, map {hp}x{wp}"
        )
    return r_rows


# ---------------------------------------------------------------------------
# TNSR binary format
#
# magic "TNSR" | version u8 = 1 | ndim u8 in {2, 3} | ndim x u32 LE dims |
# payload = prod(dims) float32 LE, row-major (channel-last for ndim = 3).
# ---------------------------------------------------------------------------


def tnsr_bytes(obj: ImageTensor | SaliencyMap) -> bytes:
    """Serialize an image or saliency map to TNSR bytes."""
    arr = obj.data
    header = TNSR_MAGIC + struct.pack("<BB", TNSR_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4").tobytes()


def parse_tnsr(data: bytes) -> ImageTensor | SaliencyMap:
    """Decode TNSR bytes into a SaliencyMap (ndim 2) or ImageTensor (ndim 3)."""
    if len(data) < 4 or data[:4] != TNSR_MAGIC:
        raise BadMagicError(f"expected {TNSR_MAGIC!r} magic, got {data[:4]!r}")
    if len(data) < 6:
        raise TruncatedPayloadError("header ends before version/ndim fields")
    version, ndim = struct.unpack_from("<BB", data, 4)
    if version != TNSR_VERSION:
        raise TensorFormatError(f"unsupported TNSR version {version}")
    if ndim not in (2, 3):
        raise TensorFormatError(f"ndim must be 2 or 3, got {ndim}")
    dims_end = 6 + 4 * ndim
    if len(data) < dims_end:
        raise TruncatedPayloadError("header ends before dimension fields")
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    if any(d == 0 for d in dims):
        raise DimensionOverflowError(f"zero dimension in {dims}")
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise DimensionOverflowError(f"{dims} declares {count} elements")
    expected = dims_end + 4 * count
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"payload holds {len(data) - dims_end} bytes, header promises {4 * count}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("payload contains non-finite values")
    try:
        return SaliencyMap(arr) if ndim == 2 else ImageTensor(arr)
    except ValueError as exc:
        raise TensorFormatError(str(exc)) from exc


def write_tnsr(path, obj: ImageTensor | SaliencyMap) -> None:
    with open(path, "wb") as fh:
        fh.write(tnsr_bytes(obj))


def read_tnsr(path) -> ImageTensor | SaliencyMap:
    with open(path, "rb") as fh:
        return parse_tnsr(fh.read())


# ---------------------------------------------------------------------------
# PGM (P5) / PPM (P6), binary variants
# ---------------------------------------------------------------------------


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Skip whitespace and '#' comments, then read one token."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise MalformedHeaderError("header ended while expecting a token")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _parse_netpbm(data: bytes, magic: bytes) -> ImageTensor:
    if data[:2] != magic:
        raise MalformedHeaderError(f"expected {magic!r} magic, got {data[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(data, pos)
        if not token.isdigit():
            raise MalformedHeaderError(f"non-numeric header field {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad raster size {width}x{height}")
    if maxval not in (255, 65535):
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (use 255 or 65535)")
    # Exactly one whitespace byte separates the header from the raster.
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace before raster")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    need = count * dtype.itemsize
    if len(data) - pos != need:
        raise TruncatedPayloadError(
            f"raster holds {len(data) - pos} bytes, header promises {need}"
        )
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    arr = raw.astype(np.float64).reshape(height, width, channels) / maxval
    return ImageTensor(arr)


def image_load(data: bytes, format: str | None = None) -> ImageTensor:
    """Decode raw bytes into an ImageTensor.

    Supported formats: "pgm" (binary P5, C=1), "ppm" (binary P6, C=3) and
    "tnsr". With format=None the format is sniffed from the magic bytes.
    Integer pixels are divided by maxval into [0, 1].
    """
    if format is None:
        if data[:4] == TNSR_MAGIC:
            format = "tnsr"
        elif data[:2] == b"P5":
            format = "pgm"
        elif data[:2] == b"P6":
            format = "ppm"
        else:
            raise BadMagicError(f"unrecognized image magic {data[:4]!r}")
    if format == "pgm":
        return _parse_netpbm(data, b"P5")
    if format == "ppm":
        return _parse_netpbm(data, b"P6")
    if format == "tnsr":
        obj = parse_tnsr(data)
        if not isinstance(obj, ImageTensor):
            raise TensorFormatError("TNSR file is 2-D; expected a 3-D image")
        return obj
    raise ValueError(f"unknown image format {format!r}")


def load_image_file(path) -> ImageTensor:
    with open(path, "rb") as fh:
        return image_load(fh.read())
