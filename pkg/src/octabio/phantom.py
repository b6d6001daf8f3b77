"""Synthetic OCTA-like phantoms with known ground truth.

Lesion phantoms are a thick curvilinear bright blob (optionally riddled with
dark holes) on a dim noisy background with salt-and-pepper speckle. Healthy
phantoms are dark fields with sparse speckle only.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .biomarkers import BiomarkerRecord
from .imgcore import DEFAULT_PIXELS_PER_SIDE, DEFAULT_SCAN_SIZE_UM, BinaryMask, GrayImage
from .whitebox import Label, dt_rules_classify


def _disk_union(shape, centres, radii):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    out = np.zeros(shape, dtype=bool)
    for (cy, cx), r in zip(centres, radii):
        y0, y1 = max(int(cy - r - 1), 0), min(int(cy + r + 2), shape[0])
        x0, x1 = max(int(cx - r - 1), 0), min(int(cx + r + 2), shape[1])
        sub = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2 <= r * r
        out[y0:y1, x0:x1] |= sub
    return out


def lesion_mask(rng, size=DEFAULT_PIXELS_PER_SIDE, holes=True):
    """A thick smooth worm of disks along a random quadratic curve."""
    margin = size * 0.2
    p0, p1, p2 = (rng.uniform(margin, size - margin, 2) for _ in range(3))
    t = np.linspace(0, 1, 200)[:, None]
    curve = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
    base_r = rng.uniform(0.03, 0.05) * size
    radii = base_r * (1 + 0.3 * np.sin(2 * np.pi * (t[:, 0] * rng.uniform(1, 3) + rng.uniform())))
    mask = _disk_union((size, size), curve, radii)
    if holes:
        n_holes = rng.integers(4, 12)
        for _ in range(n_holes):
            # at least 2 px so the hole survives smoothing at small sizes
            r = max(rng.uniform(0.006, 0.012) * size, 2.0)
            # centre deep enough that a 2 px wall keeps the hole enclosed
            ys, xs = np.nonzero(ndimage.distance_transform_edt(mask) > r + 2)
            if len(ys) == 0:
                break
            k = rng.integers(len(ys))
            mask &= ~_disk_union((size, size), [(ys[k], xs[k])], [r])
    return mask


def render(mask, rng, background=(20.0, 8.0), foreground=(215.0, 12.0), salt=0.004, pepper=0.004):
    """Grayscale image of ``mask`` with Gaussian intensity noise and speckle."""
    h, w = mask.shape
    img = rng.normal(*background, size=(h, w))
    img[mask] = rng.normal(*foreground, size=int(mask.sum()))
    img[(rng.random((h, w)) < salt) & ~mask] = 255
    img[(rng.random((h, w)) < pepper) & mask] = 0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def lesion_phantom(seed: int, size=DEFAULT_PIXELS_PER_SIDE, holes=True, scan_size_um=None):
    """Return ``(GrayImage, ground-truth BinaryMask)`` for one lesion phantom."""
    rng = np.random.default_rng(seed)
    scan = scan_size_um or DEFAULT_SCAN_SIZE_UM * size / DEFAULT_PIXELS_PER_SIDE
    truth = lesion_mask(rng, size, holes)
    return GrayImage(render(truth, rng), scan), BinaryMask(truth, scan)


def healthy_phantom(seed: int, size=DEFAULT_PIXELS_PER_SIDE, scan_size_um=None):
    rng = np.random.default_rng(seed)
    scan = scan_size_um or DEFAULT_SCAN_SIZE_UM * size / DEFAULT_PIXELS_PER_SIDE
    empty = np.zeros((size, size), dtype=bool)
    img = render(empty, rng, background=(4.0, 2.0), salt=0.001, pepper=0.0)
    return GrayImage(img, scan), BinaryMask(empty, scan)


def phantom_suite(n=20, seed=0, size=DEFAULT_PIXELS_PER_SIDE):
    """The bundled evaluation suite: ``n`` lesion phantoms, every other one
    with holes. Returns a list of ``(image_id, GrayImage, truth)``."""
    out = []
    for k in range(n):
        img, truth = lesion_phantom(seed * 1000 + k, size, holes=(k % 2 == 0))
        out.append((f"phantom_{k:02d}", img, truth))
    return out


def section_stack_phantom(n_sections, radius_px, seed=0, size=128, scan_size_um=None):
    """Sections of a rounded lesion whose disk radius swells mid-stack.

    Returns ``(images, truths)``; every section carries a lesion so that the
    pipeline has something to segment.
    """
    rng = np.random.default_rng(seed)
    scan = scan_size_um or DEFAULT_SCAN_SIZE_UM * size / DEFAULT_PIXELS_PER_SIDE
    images, truths = [], []
    c = (size / 2, size / 2)
    for z in range(n_sections):
        r = radius_px * (0.6 + 0.4 * np.sin(np.pi * (z + 0.5) / n_sections))
        truth = _disk_union((size, size), [c], [r])
        images.append(GrayImage(render(truth, rng), scan))
        truths.append(BinaryMask(truth, scan))
    return images, truths


# -- tabular data ---------------------------------------------------------------

_REGIONS = {
    # (mcnv range, total-area sampler) per decision-rule region, areas in mm^2
    "R1": ((0.002, 0.008), lambda m, r: m + r.uniform(0.0, 0.03)),
    "R2": ((0.0105, 0.018), lambda m, r: r.uniform(m, 0.0185)),
    "R3": ((0.0125, 0.028), lambda m, r: r.uniform(max(m, 0.022), 0.04)),
    "R4": ((0.032, 0.040), lambda m, r: m + r.uniform(0.0, 0.01)),
}


def table_region_dataset(n_sick=60, n_not_sick=40, seed=0):
    """Records sampled inside the four decision-rule regions.

    Labels follow the rules exactly. Sick records are split between the two
    Sick regions and likewise for NotSick; total area never undercuts mCNV
    area.
    """
    rng = np.random.default_rng(seed)
    plan = [("R2", n_sick // 2), ("R4", n_sick - n_sick // 2),
            ("R1", n_not_sick // 2), ("R3", n_not_sick - n_not_sick // 2)]
    records, labels = [], []
    for region, count in plan:
        (lo, hi), total_of = _REGIONS[region]
        for _ in range(count):
            m = float(rng.uniform(lo, hi))
            t = float(total_of(m, rng))
            rec = BiomarkerRecord(f"{region}_{len(records):03d}", m, t, m / t, 0, 0)
            records.append(rec)
            labels.append(dt_rules_classify(rec))
    order = rng.permutation(len(records))
    return [records[i] for i in order], [labels[i] for i in order]


def separable_dataset(n=40, cut=0.015, seed=0):
    """Records split by mCNV area alone: NotSick below ``cut``, Sick above."""
    rng = np.random.default_rng(seed)
    records, labels = [], []
    for k in range(n):
        sick = k % 2 == 0
        m = float(rng.uniform(cut + 0.002, 0.04) if sick else rng.uniform(0.001, cut - 0.002))
        t = m + float(rng.uniform(0, 0.01))
        records.append(BiomarkerRecord(f"s{k:03d}", m, t, m / t, 0, 0))
        labels.append(Label.SICK if sick else Label.NOT_SICK)
    return records, labels
