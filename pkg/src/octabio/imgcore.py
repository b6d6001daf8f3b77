"""Grayscale/binary raster types, PGM/PNG I/O, pixel geometry and data cleaning."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_SCAN_SIZE_UM = 200.0
DEFAULT_PIXELS_PER_SIDE = 510


def _frozen(arr, dtype):
    a = np.array(arr, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit single-channel image, stored as an (height, width) uint8 array.

    ``scan_size_um`` is the physical side length of the field of view along
    the width axis.
    """

    pixels: np.ndarray
    scan_size_um: float = DEFAULT_SCAN_SIZE_UM

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel values must lie in [0, 255]")
        if not self.scan_size_um > 0:
            raise ValueError("scan_size_um must be positive")
        object.__setattr__(self, "pixels", _frozen(px, np.uint8))
        object.__setattr__(self, "scan_size_um", float(self.scan_size_um))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def geometry(self) -> "PixelGeometry":
        return pixel_geometry(self.scan_size_um, self.width)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.scan_size_um == other.scan_size_um and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster; True marks object (vessel) pixels."""

    pixels: np.ndarray
    scan_size_um: float = DEFAULT_SCAN_SIZE_UM

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {px.shape}")
        if px.dtype != np.bool_:
            if not np.all((px == 0) | (px == 1)):
                raise ValueError("mask values must be 0/1 or boolean")
        object.__setattr__(self, "pixels", _frozen(px, np.bool_))
        object.__setattr__(self, "scan_size_um", float(self.scan_size_um))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.pixels))

    @property
    def geometry(self) -> "PixelGeometry":
        return pixel_geometry(self.scan_size_um, self.width)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.scan_size_um == other.scan_size_um and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class PixelGeometry:
    pixel_pitch_um: float
    pixel_area_mm2: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "pixel_area_mm2", (self.pixel_pitch_um / 1000.0) ** 2)

    @property
    def pixel_area_um2(self) -> float:
        return self.pixel_pitch_um ** 2


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("crop extents must be positive")
        if self.x < 0 or self.y < 0:
            raise ValueError("crop origin must be non-negative")

    @classmethod
    def full(cls, img) -> "CropRect":
        return cls(0, 0, img.width, img.height)

    def compose(self, inner: "CropRect") -> "CropRect":
        """Rectangle equivalent to cropping with ``self`` and then ``inner``."""
        return CropRect(self.x + inner.x, self.y + inner.y, inner.w, inner.h)


def pixel_geometry(scan_size_um: float, pixels_per_side: int) -> PixelGeometry:
    """Pixel pitch and area for a square field of view.

    >>> g = pixel_geometry(200, 510)
    >>> round(g.pixel_area_um2, 3)
    0.154
    """
    if not scan_size_um > 0 or not pixels_per_side > 0:
        raise ValueError("scan size and pixel count must be positive")
    geom = PixelGeometry(scan_size_um / pixels_per_side)
    log.debug("pixel area %.4g um^2 (%.4g mm^2)", geom.pixel_area_um2, geom.pixel_area_mm2)
    return geom


# -- file I/O -------------------------------------------------------------

def _read_pgm_tokens(data: bytes, count: int):
    tokens = []
    pos = 2
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_pgm_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: zero image dimensions")
    if maxval != 255:
        raise ValueError(f"{path}: unsupported bit depth (maxval {maxval}, need 255)")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path: PathLike, pixels: np.ndarray) -> None:
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = px.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + px.tobytes())


def _read_png(path: PathLike) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "1"):
            arr = np.asarray(im.convert("L"))
        elif im.mode == "LA":
            arr = np.asarray(im.getchannel("L"))
        elif im.mode == "P":
            rgb = np.asarray(im.convert("RGB"))
            if not (np.array_equal(rgb[..., 0], rgb[..., 1]) and np.array_equal(rgb[..., 1], rgb[..., 2])):
                raise ValueError(f"{path}: palette is not grayscale")
            arr = rgb[..., 0]
        else:
            raise ValueError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit gray)")
    if arr.size == 0:
        raise ValueError(f"{path}: zero image dimensions")
    return np.array(arr, dtype=np.uint8)


def _sidecar_scan_size(path: Path):
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
        if "scan_size_um" in meta:
            return float(meta["scan_size_um"])
    return None


def load_gray(path: PathLike, scan_size_um: float | None = None) -> GrayImage:
    """Read an 8-bit PGM (P5) or grayscale PNG.

    The physical scan size comes from the argument, else from a ``<stem>.json``
    sidecar with a ``scan_size_um`` key, else the 200 um default.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P5":
        pixels = read_pgm(path)
    elif magic == b"\x89PNG\r\n\x1a\n":
        pixels = _read_png(path)
    else:
        raise ValueError(f"{path}: unrecognised image format")
    if scan_size_um is None:
        scan_size_um = _sidecar_scan_size(path) or DEFAULT_SCAN_SIZE_UM
    return GrayImage(pixels, scan_size_um)


def save_gray(img: GrayImage, path: PathLike) -> None:
    write_pgm(path, img.pixels)


def save_mask(mask: BinaryMask, path: PathLike) -> None:
    write_pgm(path, np.where(mask.pixels, 255, 0).astype(np.uint8))


def load_mask(path: PathLike, scan_size_um: float | None = None) -> BinaryMask:
    img = load_gray(path, scan_size_um)
    return BinaryMask(img.pixels >= 128, img.scan_size_um)


# -- data cleaning ----------------------------------------------------------

def crop(img, rect: CropRect):
    """Cut ``rect`` out of a GrayImage or BinaryMask.

    The scan size shrinks with the width so the pixel pitch is preserved.
    """
    if rect.x + rect.w > img.width or rect.y + rect.h > img.height:
        raise ValueError(f"crop {rect} exceeds image bounds {img.width}x{img.height}")
    sub = img.pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
    return type(img)(sub, img.scan_size_um * rect.w / img.width)


def gaussian_kernel1d(kernel_size: int, sigma: float) -> np.ndarray:
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    # 'symmetric' repeats the edge sample: (c b a | a b c | c b a)
    padded = np.pad(a, pad, mode="symmetric")
    n = a.shape[axis]
    out = np.zeros_like(a, dtype=np.float64)
    for i, w in enumerate(k):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img: GrayImage, kernel_size: int = 5, sigma: float = 1.0) -> GrayImage:
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel1d(kernel_size, sigma)
    a = img.pixels.astype(np.float64)
    out = _correlate_axis(_correlate_axis(a, k, 1), k, 0)
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return GrayImage(out, img.scan_size_um)
