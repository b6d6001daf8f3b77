"""Overlap agreement between a segmented mask and a reference annotation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .imgcore import BinaryMask


@dataclass(frozen=True)
class OverlapReport:
    intersection_px: int
    union_px: int
    a_px: int
    b_px: int
    jaccard_index: float
    jaccard_distance: float
    dice: float
    both_empty: bool = False

    def to_dict(self):
        return asdict(self)


def _ratios(inter: int, union: int, a: int, b: int):
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / (a + b)


def overlap(a: BinaryMask, b: BinaryMask) -> OverlapReport:
    """Jaccard index/distance and Dice coefficient of two masks.

    Two empty masks agree vacuously: both scores are 1 and ``both_empty``
    is set.
    """
    pa, pb = np.asarray(getattr(a, "pixels", a), bool), np.asarray(getattr(b, "pixels", b), bool)
    if pa.shape != pb.shape:
        raise ValueError(f"mask shapes differ: {pa.shape} vs {pb.shape}")
    inter = int(np.count_nonzero(pa & pb))
    union = int(np.count_nonzero(pa | pb))
    na, nb = int(np.count_nonzero(pa)), int(np.count_nonzero(pb))
    j, d = _ratios(inter, union, na, nb)
    return OverlapReport(inter, union, na, nb, j, 1.0 - j, d, union == 0)


def aggregate(reports) -> dict:
    """Mean of per-image scores and scores of the pooled pixel counts."""
    reports = list(reports)
    if not reports:
        return {"n": 0}
    inter = sum(r.intersection_px for r in reports)
    union = sum(r.union_px for r in reports)
    na = sum(r.a_px for r in reports)
    nb = sum(r.b_px for r in reports)
    pj, pd = _ratios(inter, union, na, nb)
    return {
        "n": len(reports),
        "mean_jaccard": float(np.mean([r.jaccard_index for r in reports])),
        "mean_dice": float(np.mean([r.dice for r in reports])),
        "pooled_jaccard": pj,
        "pooled_dice": pd,
    }
