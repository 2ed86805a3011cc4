"""Single-channel float image container and bit-exact file I/O.

Images are row-major float32 grids with a nominal [0, 1] intensity range.
Two containers are supported:

* binary PGM (P5), 8- or 16-bit, for interchange with standard tools;
* IMF, a lossless float container (one JSON header line followed by the
  raw little-endian float32 payload) used wherever quantization would
  destroy information, e.g. deconvolution outputs that stray outside
  [0, 1] before export.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageGray",
    "ImageFormatError",
    "fnv1a64",
    "load_image",
    "save_image",
    "downsample",
    "crop",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class ImageFormatError(ValueError):
    """Raised for malformed, truncated, or corrupt image files."""


def fnv1a64(payload: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in payload:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class ImageGray:
    """Immutable single-channel image; ``data`` is a (height, width) float32 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "ImageGray":
        return cls(np.zeros((height, width), dtype=np.float32))


def _read_pgm_tokens(f, count):
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise ImageFormatError("truncated PGM header")
        if ch in b" \t\r\n":
            continue
        if ch == b"#":
            while ch and ch != b"\n":
                ch = f.read(1)
            continue
        tok = ch
        while True:
            ch = f.read(1)
            if not ch or ch in b" \t\r\n":
                break
            tok += ch
        tokens.append(tok)
    return tokens


def _load_pgm(path: str) -> ImageGray:
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != b"P5":
            raise ImageFormatError(f"{path}: not a binary PGM (magic {magic!r})")
        w, h, maxval = (int(t) for t in _read_pgm_tokens(f, 3))
        if w <= 0 or h <= 0:
            raise ImageFormatError(f"{path}: zero or negative dimension {w}x{h}")
        if not 0 < maxval < 65536:
            raise ImageFormatError(f"{path}: bad maxval {maxval}")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = f.read(w * h * dtype.itemsize)
        if len(payload) != w * h * dtype.itemsize:
            raise ImageFormatError(f"{path}: truncated pixel payload")
        raw = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    data = (raw.astype(np.float64) / maxval).astype(np.float32)
    return ImageGray(data)


def _load_imf(path: str) -> ImageGray:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ImageFormatError(f"{path}: malformed IMF header") from exc
        w = header.get("w")
        h = header.get("h")
        if header.get("dtype") != "f32le":
            raise ImageFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        if not isinstance(w, int) or not isinstance(h, int) or w <= 0 or h <= 0:
            raise ImageFormatError(f"{path}: bad dimensions {w}x{h}")
        payload = f.read(4 * w * h)
        if len(payload) != 4 * w * h:
            raise ImageFormatError(f"{path}: truncated IMF payload")
        if f"{fnv1a64(payload):016x}" != header.get("fnv64"):
            raise ImageFormatError(f"{path}: IMF checksum mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return ImageGray(data)


def load_image(path: str | os.PathLike) -> ImageGray:
    """Load a PGM (P5) or IMF file.

    Integer PGM samples are scaled to [0, 1] by the file's maxval; IMF
    floats are loaded verbatim and checksum-verified.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"P5":
        return _load_pgm(path)
    if magic == b'{"':
        return _load_imf(path)
    raise ImageFormatError(f"{path}: unrecognized image container")


def save_image(img: ImageGray, path: str | os.PathLike, format: str = "imf") -> None:
    """Write an image as pgm8, pgm16, or imf.

    PGM output clamps to [0, 1] and quantizes by round-half-away-from-zero
    of ``value * maxval``. IMF stores the float32 payload losslessly.
    """
    path = os.fspath(path)
    if format == "imf":
        payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
        header = json.dumps(
            {"w": img.width, "h": img.height, "dtype": "f32le",
             "fnv64": f"{fnv1a64(payload):016x}"},
            separators=(",", ":"),
        )
        with open(path, "wb") as f:
            f.write(header.encode("utf-8"))
            f.write(b"\n")
            f.write(payload)
        return

    if format == "pgm8":
        maxval, dtype = 255, np.dtype("u1")
    elif format == "pgm16":
        maxval, dtype = 65535, np.dtype(">u2")
    else:
        raise ValueError(f"unknown format {format!r}")
    clamped = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    # values are nonnegative after the clamp, so floor(x + 0.5) rounds
    # half away from zero
    quant = np.floor(clamped * maxval + 0.5).astype(np.uint32)
    quant = np.minimum(quant, maxval).astype(dtype)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii"))
        f.write(quant.tobytes())


def downsample(img: ImageGray, factor: int) -> ImageGray:
    """Block-mean downsample; edge blocks clipped to the image extent.

    Output is ceil(height/factor) x ceil(width/factor); each output pixel
    averages the in-image pixels of its factor x factor block.
    """
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    h, w = img.shape
    row_starts = np.arange(0, h, factor)
    col_starts = np.arange(0, w, factor)
    data = img.data.astype(np.float64)
    sums = np.add.reduceat(np.add.reduceat(data, row_starts, axis=0), col_starts, axis=1)
    rcount = np.minimum(row_starts + factor, h) - row_starts
    ccount = np.minimum(col_starts + factor, w) - col_starts
    counts = rcount[:, None] * ccount[None, :]
    return ImageGray((sums / counts).astype(np.float32))


def crop(img: ImageGray, x0: int, y0: int, w: int, h: int) -> ImageGray:
    """Exact sub-rectangle copy; out-of-bounds windows are an error."""
    if w < 1 or h < 1:
        raise ValueError(f"crop window must be positive, got {w}x{h}")
    if x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise ValueError(
            f"crop window ({x0},{y0},{w},{h}) exceeds image {img.width}x{img.height}"
        )
    return ImageGray(img.data[y0 : y0 + h, x0 : x0 + w].copy())
