"""Image processing phase: capped Otsu, multilevel and binary thresholding,
salt-and-pepper removal, component labeling and region fill."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import BinaryMask, CropRect, GrayImage, crop as crop_image, gaussian_blur

log = logging.getLogger(__name__)

STAGE_NAMES = (
    "original",
    "cropped",
    "gaussian",
    "otsu",
    "multilevel",
    "binary",
    "saltpepper",
    "components",
)


@dataclass(frozen=True)
class PipelineConfig:
    otsu_cap: int = 170
    multi_cuts: tuple = (85, 170)
    binary_threshold: int = 127
    sp_window: int = 3
    connectivity: int = 8
    gaussian_kernel: int = 5
    gaussian_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "multi_cuts", tuple(int(c) for c in self.multi_cuts))
        if not 0 < self.otsu_cap <= 255:
            raise ValueError("otsu_cap must be in (0, 255]")
        cuts = self.multi_cuts
        if any(not 0 < c < 255 for c in cuts) or any(a >= b for a, b in zip(cuts, cuts[1:])):
            raise ValueError("multi_cuts must be strictly ascending within (0, 255)")
        if not 0 <= self.binary_threshold <= 255:
            raise ValueError("binary_threshold must be in [0, 255]")
        if self.sp_window < 3 or self.sp_window % 2 == 0:
            raise ValueError("sp_window must be odd and >= 3")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.gaussian_kernel < 3 or self.gaussian_kernel % 2 == 0:
            raise ValueError("gaussian_kernel must be odd and >= 3")
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multi_cuts"] = list(self.multi_cuts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def load_config(path) -> PipelineConfig:
    """Read a PipelineConfig from a ``.json`` or ``.toml`` file."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    return PipelineConfig.from_dict(data.get("pipeline", data))


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    component_sizes: dict = field(default_factory=dict)
    scan_size_um: float = 200.0

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def n_components(self):
        return len(self.component_sizes)


# -- thresholding -------------------------------------------------------------

def otsu_threshold(img: GrayImage) -> int:
    """Otsu's threshold over the 256-bin histogram.

    Returns the smallest ``t`` in [0, 254] maximising the between-class
    variance of the split ``<= t`` / ``> t``. A constant image has no valid
    split and returns its own value.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.int64)
    nz = np.flatnonzero(hist)
    if len(nz) < 2:
        return int(nz[0])
    n = int(hist.sum())
    total = int(np.dot(hist, np.arange(256)))
    n0 = np.cumsum(hist)
    s0 = np.cumsum(hist * np.arange(256))
    # between-class variance * n^2 = (n*s0 - n0*s)^2 / (n0*n1); compared exactly
    best_t, best_num, best_den = 0, 0, 1
    for t in range(int(nz[0]), int(nz[-1])):
        a, s = int(n0[t]), int(s0[t])
        num = (n * s - a * total) ** 2
        den = a * (n - a)
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_cap(img: GrayImage, cap: int = 170) -> GrayImage:
    """Set pixels above the Otsu threshold to ``cap``; the rest are kept."""
    if not 0 < cap <= 255:
        raise ValueError("cap must be in (0, 255]")
    t = otsu_threshold(img)
    out = np.where(img.pixels > t, np.uint8(cap), img.pixels)
    return GrayImage(out, img.scan_size_um)


def band_levels(n_bands: int) -> np.ndarray:
    if n_bands == 1:
        return np.zeros(1, dtype=np.uint8)
    k = np.arange(n_bands)
    return np.floor(255.0 * k / (n_bands - 1) + 0.5).astype(np.uint8)


def multi_threshold(img: GrayImage, cuts=(85, 170)) -> GrayImage:
    cuts = np.asarray(cuts, dtype=np.int64)
    if np.any(np.diff(cuts) <= 0):
        raise ValueError("cuts must be strictly ascending")
    band = np.searchsorted(cuts, img.pixels, side="right")
    return GrayImage(band_levels(len(cuts) + 1)[band], img.scan_size_um)


def binary_threshold(img: GrayImage, t: int = 127) -> BinaryMask:
    return BinaryMask(img.pixels > t, img.scan_size_um)


def window_counts(mask: np.ndarray, window: int) -> np.ndarray:
    """Number of True pixels in each ``window`` x ``window`` neighbourhood,
    with the border mirrored."""
    r = window // 2
    padded = np.pad(mask.astype(np.int32), r, mode="symmetric")
    c = np.pad(padded.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    h, w = mask.shape
    return (c[window : window + h, window : window + w] - c[:h, window : window + w]
            - c[window : window + h, :w] + c[:h, :w])


def salt_pepper_filter(mask: BinaryMask, window: int = 3) -> BinaryMask:
    """Binary median (majority vote) filter."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    counts = window_counts(mask.pixels, window)
    return BinaryMask(2 * counts > window * window, mask.scan_size_um)


# -- components ---------------------------------------------------------------

def _structure(connectivity: int):
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def label_components(mask: BinaryMask, connectivity: int = 8) -> LabelMap:
    """Connected components numbered 1.. in raster-scan discovery order."""
    raw, n = ndimage.label(mask.pixels, structure=_structure(connectivity))
    if n == 0:
        return LabelMap(np.zeros(mask.pixels.shape, dtype=np.int32), {}, mask.scan_size_um)
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first, kind="stable")]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw]
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    return LabelMap(labels, {k: int(sizes[k]) for k in range(1, n + 1)}, mask.scan_size_um)


def largest_component(lm: LabelMap) -> BinaryMask:
    """Keep the component with the most pixels; ties go to the smaller label."""
    if not lm.component_sizes:
        return BinaryMask(np.zeros(lm.labels.shape, dtype=bool), lm.scan_size_um)
    best = max(lm.component_sizes, key=lambda k: (lm.component_sizes[k], -k))
    return BinaryMask(lm.labels == best, lm.scan_size_um)


def region_fill(mask: BinaryMask) -> BinaryMask:
    """Fill background holes not 4-connected to the image border."""
    bg = ~mask.pixels
    lab, _ = ndimage.label(bg, structure=_structure(4))
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    outside = np.isin(lab, border[border > 0])
    return BinaryMask(~outside, mask.scan_size_um)


def render_labels(lm: LabelMap) -> np.ndarray:
    """Grayscale rendering of a label map; the largest component is white."""
    out = np.zeros(lm.labels.shape, dtype=np.uint8)
    if not lm.component_sizes:
        return out
    out[lm.labels > 0] = (60 + (lm.labels[lm.labels > 0] * 137) % 140).astype(np.uint8)
    best = max(lm.component_sizes, key=lambda k: (lm.component_sizes[k], -k))
    out[lm.labels == best] = 255
    return out


# -- full pipeline ------------------------------------------------------------

def pipeline_stages(img: GrayImage, cfg: PipelineConfig = PipelineConfig(), rect: CropRect | None = None):
    """Run every stage and return ``(stages, mask)``.

    ``stages`` maps each name in ``STAGE_NAMES`` to a uint8 array suitable for
    dumping as PGM; ``mask`` is the selected main component.
    """
    rect = rect or CropRect.full(img)
    stages = {"original": img.pixels}
    cropped = crop_image(img, rect)
    stages["cropped"] = cropped.pixels
    smooth = gaussian_blur(cropped, cfg.gaussian_kernel, cfg.gaussian_sigma)
    stages["gaussian"] = smooth.pixels
    capped = otsu_cap(smooth, cfg.otsu_cap)
    stages["otsu"] = capped.pixels
    banded = multi_threshold(capped, cfg.multi_cuts)
    stages["multilevel"] = banded.pixels
    binary = binary_threshold(banded, cfg.binary_threshold)
    stages["binary"] = np.where(binary.pixels, 255, 0).astype(np.uint8)
    clean = salt_pepper_filter(binary, cfg.sp_window)
    stages["saltpepper"] = np.where(clean.pixels, 255, 0).astype(np.uint8)
    lm = label_components(clean, cfg.connectivity)
    stages["components"] = render_labels(lm)
    mask = largest_component(lm)
    if mask.count == 0:
        log.warning("pipeline produced an empty mask")
    return stages, mask


def run_pipeline(img: GrayImage, cfg: PipelineConfig = PipelineConfig(), rect: CropRect | None = None) -> BinaryMask:
    return pipeline_stages(img, cfg, rect)[1]
