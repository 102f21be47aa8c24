"""Amplitude raster and mask containers plus file I/O.

Two input formats are supported:

* RAS1 — a minimal float raster used for lossless storage of amplitudes:
  magic ``b"RAS1"`` | u32 LE width | u32 LE height | width*height
  float32 LE values, row-major with row 0 at the top. Round-trips are
  bit-exact.
* Grayscale PNG, 8 or 16 bit — integer codes are scaled to [0, 1] by the
  maximum code value (255 or 65535), which keeps the integer information
  recoverable.

Masks are 8/16-bit grayscale PNGs whose raw integer values are region
ids (0 = background); no scaling is applied.

All values are immutable after construction; reading files in parallel
is safe.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

RAS1_MAGIC = b"RAS1"
_PNG_MAGIC = b"\x89PNG"


@dataclass(frozen=True)
class AmplitudeImage:
    """2-D raster of non-negative SAR amplitudes.

    ``data`` is a (height, width) float32 array. ``normalized`` records
    whether values are known to lie in [0, 1] (after dynamic-range
    normalization, or because the source format bounds them).
    """

    width: int
    height: int
    data: np.ndarray = field(repr=False)
    normalized: bool = False
    source_id: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError("degenerate-dimensions",
                             f"image must have positive size, got {self.width}x{self.height}")
        if self.data.shape != (self.height, self.width):
            raise InputError("dimension-mismatch",
                             f"data shape {self.data.shape} != ({self.height}, {self.width})")
        if not np.all(np.isfinite(self.data)):
            raise InputError("non-finite-values", f"image {self.source_id!r} contains NaN/Inf")
        if np.any(self.data < 0):
            raise InputError("negative-values", f"image {self.source_id!r} contains negative amplitudes")
        if self.normalized and np.any(self.data > 1.0):
            raise InputError("range-exceeded",
                             f"image {self.source_id!r} marked normalized but has values > 1")

    @classmethod
    def from_array(cls, array, normalized: bool = False, source_id: str = "") -> "AmplitudeImage":
        """Build an image from any 2-D array-like, converting to float32."""
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
        if arr.ndim != 2:
            raise InputError("dimension-mismatch", f"expected a 2-D array, got ndim={arr.ndim}")
        h, w = arr.shape
        return cls(width=w, height=h, data=arr, normalized=normalized, source_id=source_id)

    @property
    def pixels(self) -> np.ndarray:
        """Flattened row-major view of the raster values."""
        return self.data.ravel()


@dataclass(frozen=True)
class SceneMask:
    """Integer region-id raster aligned with an amplitude image (0 = background)."""

    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise InputError("dimension-mismatch",
                             f"mask shape {self.data.shape} != ({self.height}, {self.width})")
        if np.any(self.data < 0):
            raise InputError("negative-values", "mask region ids must be non-negative")

    @classmethod
    def from_array(cls, array) -> "SceneMask":
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.int32))
        if arr.ndim != 2:
            raise InputError("dimension-mismatch", f"expected a 2-D array, got ndim={arr.ndim}")
        h, w = arr.shape
        return cls(width=w, height=h, data=arr)


def _sniff(path: Path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read(4)
    except FileNotFoundError:
        raise InputError("missing-file", f"no such file: {path}")


def read_raster(path) -> AmplitudeImage:
    """Read an amplitude raster (RAS1 or 8/16-bit grayscale PNG).

    PNG codes are divided by the maximum code value, so PNG reads are
    always normalized. RAS1 carries no normalization metadata; the flag
    is inferred as true when every value is <= 1.

    Raises
    ------
    InputError
        Codes: ``missing-file``, ``unsupported-format``,
        ``malformed-header``, ``payload-size-mismatch``,
        ``non-finite-values``, ``negative-values``.
    """
    path = Path(path)
    magic = _sniff(path)
    if magic == RAS1_MAGIC:
        return _read_ras1(path)
    if magic == _PNG_MAGIC:
        return _read_png(path)
    raise InputError("unsupported-format", f"{path}: unrecognized magic {magic!r}")


def _read_ras1(path: Path) -> AmplitudeImage:
    raw = path.read_bytes()
    if len(raw) < 12:
        raise InputError("malformed-header", f"{path}: RAS1 header truncated")
    width, height = struct.unpack_from("<II", raw, 4)
    if width == 0 or height == 0:
        raise InputError("degenerate-dimensions", f"{path}: {width}x{height} raster")
    expected = 12 + 4 * width * height
    if len(raw) != expected:
        raise InputError("payload-size-mismatch",
                         f"{path}: header declares {width * height} px "
                         f"but payload holds {(len(raw) - 12) // 4} floats")
    data = np.frombuffer(raw, dtype="<f4", count=width * height, offset=12)
    data = np.ascontiguousarray(data.reshape(height, width))
    normalized = bool(np.all(data <= 1.0)) if data.size else False
    return AmplitudeImage(width=width, height=height, data=data,
                          normalized=normalized, source_id=str(path))


def _read_png(path: Path) -> AmplitudeImage:
    with Image.open(path) as img:
        mode = img.mode
        if mode == "L":
            max_code = 255.0
            arr = np.asarray(img, dtype=np.uint8)
        elif mode in ("I", "I;16", "I;16B"):
            max_code = 65535.0
            arr = np.asarray(img, dtype=np.int64)
        else:
            raise InputError("unsupported-format",
                             f"{path}: PNG mode {mode!r}; only 8/16-bit grayscale is supported")
    if np.any(arr < 0) or np.any(arr > max_code):
        raise InputError("range-exceeded", f"{path}: PNG codes outside [0, {int(max_code)}]")
    data = (arr.astype(np.float64) / max_code).astype(np.float32)
    h, w = data.shape
    return AmplitudeImage(width=w, height=h, data=data, normalized=True, source_id=str(path))


def write_raster(image: AmplitudeImage, path) -> None:
    """Write an amplitude image as RAS1 (bit-exact round trip).

    The image invariants are re-checked before any bytes are written, so
    a rejected image never leaves a partial file behind.
    """
    if not np.all(np.isfinite(image.data)):
        raise InputError("non-finite-values", "refusing to write NaN/Inf amplitudes")
    if np.any(image.data < 0):
        raise InputError("negative-values", "refusing to write negative amplitudes")
    if image.width == 0 or image.height == 0:
        raise InputError("degenerate-dimensions", "refusing to write an empty raster")
    payload = np.ascontiguousarray(image.data, dtype="<f4").tobytes()
    header = RAS1_MAGIC + struct.pack("<II", image.width, image.height)
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise InputError("unwritable-path", f"{path}: {exc}")


def read_mask(path) -> SceneMask:
    """Read a region-id mask from an 8/16-bit grayscale PNG (raw integer ids)."""
    path = Path(path)
    magic = _sniff(path)
    if magic != _PNG_MAGIC:
        raise InputError("unsupported-format", f"{path}: masks must be grayscale PNG")
    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16", "I;16B"):
            raise InputError("unsupported-format",
                             f"{path}: PNG mode {img.mode!r}; only 8/16-bit grayscale is supported")
        arr = np.asarray(img, dtype=np.int64)
    return SceneMask.from_array(arr)


def write_mask(mask: SceneMask, path) -> None:
    """Write a mask as 8- or 16-bit grayscale PNG depending on the id range."""
    ids = mask.data
    if ids.max(initial=0) > 65535:
        raise InputError("range-exceeded", "region ids above 65535 cannot be stored as PNG")
    if ids.max(initial=0) <= 255:
        img = Image.fromarray(ids.astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(ids.astype(np.uint16))
    try:
        img.save(Path(path), format="PNG")
    except OSError as exc:
        raise InputError("unwritable-path", f"{path}: {exc}")
