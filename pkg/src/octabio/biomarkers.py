"""mCNV area, filled (total) vessel area and vessel density."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

from .imgcore import BinaryMask, CropRect, GrayImage, PixelGeometry
from .segmentation import PipelineConfig, region_fill, run_pipeline

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "image_id",
    "object_pixels",
    "filled_pixels",
    "mcnv_area_mm2",
    "total_area_mm2",
    "vessel_density",
    "config_hash",
    "label",
)


@dataclass(frozen=True)
class BiomarkerRecord:
    image_id: str
    mcnv_area_mm2: float
    total_area_mm2: float
    vessel_density: float
    object_pixels: int
    filled_pixels: int
    empty: bool = False

    @property
    def mcnv_area_um2(self) -> float:
        return self.mcnv_area_mm2 * 1e6

    @property
    def total_area_um2(self) -> float:
        return self.total_area_mm2 * 1e6


def mcnv_area(mask: BinaryMask, geom: PixelGeometry) -> float:
    """Area in mm^2 covered by the object pixels."""
    return mask.count * geom.pixel_area_mm2


def total_area(mask: BinaryMask, geom: PixelGeometry) -> float:
    """Object area after enclosed holes have been filled, in mm^2."""
    return mcnv_area(region_fill(mask), geom)


def vessel_density(mcnv: float, total: float) -> float:
    """Ratio of vessel area to filled area; 0 for an empty lesion."""
    if mcnv < 0 or total < 0:
        raise ValueError("areas must be non-negative")
    if total == 0:
        if mcnv > 0:
            raise ValueError(f"total area {total} < mCNV area {mcnv}")
        return 0.0
    if total < mcnv:
        raise ValueError(f"total area {total} < mCNV area {mcnv}")
    return mcnv / total


def record_from_mask(image_id: str, mask: BinaryMask, geom: PixelGeometry | None = None) -> BiomarkerRecord:
    geom = geom or mask.geometry
    filled = region_fill(mask)
    obj, fill = mask.count, filled.count
    m = obj * geom.pixel_area_mm2
    t = fill * geom.pixel_area_mm2
    empty = fill == 0
    if empty:
        log.warning("%s: empty mask, biomarkers zeroed", image_id)
    return BiomarkerRecord(image_id, m, t, vessel_density(m, t), obj, fill, empty)


def extract_record(
    img: GrayImage,
    cfg: PipelineConfig = PipelineConfig(),
    rect: CropRect | None = None,
    geom: PixelGeometry | None = None,
    image_id: str = "image",
) -> BiomarkerRecord:
    """Segment ``img`` and measure its biomarkers.

    When ``geom`` is omitted it is derived from the cropped image, whose pixel
    pitch equals that of the input.
    """
    mask = run_pipeline(img, cfg, rect)
    return record_from_mask(image_id, mask, geom)


def write_records_csv(records, fh, config_hash: str = "", labels=None) -> None:
    """Write one CSV row per record to an open text file."""
    labels = labels or {}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([
            r.image_id,
            r.object_pixels,
            r.filled_pixels,
            repr(r.mcnv_area_mm2),
            repr(r.total_area_mm2),
            repr(r.vessel_density),
            config_hash,
            labels.get(r.image_id, ""),
        ])


def read_records_csv(fh):
    """Parse a features CSV back into ``(records, labels)``.

    ``labels`` maps image_id to the label string for rows that carry one.
    """
    records, labels = [], {}
    for row in csv.DictReader(fh):
        obj, fill = int(row["object_pixels"]), int(row["filled_pixels"])
        records.append(BiomarkerRecord(
            row["image_id"],
            float(row["mcnv_area_mm2"]),
            float(row["total_area_mm2"]),
            float(row["vessel_density"]),
            obj,
            fill,
            fill == 0,
        ))
        if row.get("label"):
            labels[row["image_id"]] = row["label"]
    return records, labels
