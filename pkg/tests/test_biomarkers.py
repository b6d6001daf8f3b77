import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from octabio.biomarkers import (
    CSV_COLUMNS,
    BiomarkerRecord,
    extract_record,
    mcnv_area,
    read_records_csv,
    record_from_mask,
    total_area,
    vessel_density,
    write_records_csv,
)
from octabio.imgcore import BinaryMask, GrayImage, pixel_geometry
from octabio.phantom import lesion_phantom
from oracles import bfs_fill

DEVICE = pixel_geometry(200, 510)
PX_MM2 = (200 / 510 / 1000) ** 2


def _mask_with(n, shape=(510, 510)):
    flat = np.zeros(shape[0] * shape[1], bool)
    flat[:n] = True
    return BinaryMask(flat.reshape(shape))


def test_mcnv_area_table_count():
    a = mcnv_area(_mask_with(112037), DEVICE)
    assert a == pytest.approx(112037 * PX_MM2, rel=1e-12)
    assert round(a, 5) == 0.01723


def test_mcnv_area_full_and_empty():
    assert mcnv_area(_mask_with(510 * 510), DEVICE) == pytest.approx(0.0400, abs=5e-5)
    assert mcnv_area(_mask_with(0), DEVICE) == 0.0


def test_total_area_ring_around_plus():
    # 5x5 block minus a plus-shaped 5 px hole: 20 object px enclosing 5
    m = np.zeros((9, 9), bool)
    m[2:7, 2:7] = True
    for y, x in [(4, 4), (3, 4), (5, 4), (4, 3), (4, 5)]:
        m[y, x] = False
    mask = BinaryMask(m)
    assert mask.count == 20
    g = pixel_geometry(9, 9)
    assert total_area(mask, g) == pytest.approx(25 * g.pixel_area_mm2)
    assert mcnv_area(mask, g) == pytest.approx(20 * g.pixel_area_mm2)


def test_total_area_hole_free_and_empty():
    m = BinaryMask(np.eye(6, dtype=bool))
    g = pixel_geometry(6, 6)
    assert total_area(m, g) == mcnv_area(m, g)
    assert total_area(BinaryMask(np.zeros((3, 3), bool)), g) == 0


def test_vessel_density_values():
    assert vessel_density(0.02, 0.04) == 0.5
    assert vessel_density(0.03, 0.03) == 1.0
    assert vessel_density(0.0, 0.0) == 0.0


@pytest.mark.parametrize("m, t", [(0.05, 0.04), (-1, 1), (0.1, 0.0)])
def test_vessel_density_rejects(m, t):
    with pytest.raises(ValueError):
        vessel_density(m, t)


def test_empty_record_flagged():
    rec = record_from_mask("x", BinaryMask(np.zeros((5, 5), bool)))
    assert rec.empty and rec.mcnv_area_mm2 == rec.total_area_mm2 == rec.vessel_density == 0


@settings(max_examples=200, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 16), st.integers(1, 16))))
def test_area_ordering(m):
    rec = record_from_mask("r", BinaryMask(m, 50.0))
    assert rec.total_area_mm2 >= rec.mcnv_area_mm2
    assert 0.0 <= rec.vessel_density <= 1.0
    assert rec.filled_pixels == int(bfs_fill(m).sum())


@settings(max_examples=60, deadline=None)
@given(arrays(np.bool_, (8, 8)), st.integers(1, 20))
def test_area_additive_for_disjoint_blob(m, k):
    # a separate blob to the right adds exactly its own pixels
    wide = np.zeros((8, 40), bool)
    wide[:, :8] = m
    wide[0, 20 : 20 + k] = True
    g = pixel_geometry(40, 40)
    a0 = mcnv_area(BinaryMask(np.pad(m, ((0, 0), (0, 32)))), g)
    assert mcnv_area(BinaryMask(wide), g) == pytest.approx(a0 + k * g.pixel_area_mm2)


def test_sponge_phantom_density_below_one():
    img, truth = lesion_phantom(4, size=255, holes=True)
    assert region_has_holes(truth.pixels)
    rec = extract_record(img, image_id="sponge")
    assert 0 < rec.vessel_density < 1


def region_has_holes(m):
    return bfs_fill(m).sum() > m.sum()


def test_solid_phantom_density_one():
    img, truth = lesion_phantom(5, size=255, holes=False)
    assert not region_has_holes(truth.pixels)
    rec = extract_record(img, image_id="solid")
    assert rec.vessel_density == 1.0


def test_black_input_zeroed():
    rec = extract_record(GrayImage(np.zeros((30, 30), np.uint8)), image_id="black")
    assert rec.empty and rec.mcnv_area_mm2 == 0 and rec.vessel_density == 0


def test_csv_roundtrip():
    recs = [
        BiomarkerRecord("a", 0.1 / 3, 0.05, (0.1 / 3) / 0.05, 10, 15),
        BiomarkerRecord("b", 0.0, 0.0, 0.0, 0, 0, True),
    ]
    buf = io.StringIO()
    write_records_csv(recs, buf, "abc123", {"a": "Sick"})
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back, labels = read_records_csv(io.StringIO(text))
    assert back == recs
    assert labels == {"a": "Sick"}


def test_csv_header_only():
    buf = io.StringIO()
    write_records_csv([], buf)
    assert buf.getvalue() == ",".join(CSV_COLUMNS) + "\n"
