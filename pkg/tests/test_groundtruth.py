import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopy_ledger.errors import EmptyDataError, GeometryError
from canopy_ledger.groundtruth import (
    FarmRecord, Polygon, calibrate_heights, canopy_height, cell_shade_fraction, nearest_rank,
    read_farms, shade_mask, threshold_calibration, write_farms,
)
from canopy_ledger.raster import GeoTransform, RasterGrid

T_DRONE = GeoTransform(0.0, 0.0, 0.5, -0.5)
T10 = GeoTransform(0.0, 0.0, 10.0, -10.0)


def drone(data):
    return RasterGrid(np.asarray(data, np.float32)[None], T_DRONE)


def test_canopy_height_cases():
    z = np.full((4, 4), 5.0)
    assert np.all(canopy_height(drone(z), drone(z)).data == 0)
    assert np.all(canopy_height(drone(z * 3), drone(z)).data == 10)
    assert np.all(canopy_height(drone(np.full((4, 4), 4.0)), drone(z)).data == 0)


def test_shade_threshold_boundary():
    m = shade_mask(drone([[8.0, 8.01, 0.0, 30.0]])).data[0, 0]
    assert m.tolist() == [0, 1, 0, 1]
    assert np.all(shade_mask(drone(np.zeros((3, 3)))).data == 0)


def test_shade_mask_nodata_passthrough():
    m = shade_mask(drone([[-9999.0, 10.0]]))
    assert m.valid()[0].tolist() == [False, True]


FARM = Polygon.rectangle(0.0, -20.0, 20.0, 0.0)


def test_cell_fraction_all_shade():
    cells = cell_shade_fraction(drone(np.ones((40, 40))), FARM, T10, 2, 2)
    assert len(cells) == 4 and all(c.fraction == 1.0 and c.n_drone_pixels == 400 for c in cells)


def test_cell_fraction_half():
    m = np.zeros((20, 20))
    m[:, :10] = 1
    (c,) = cell_shade_fraction(drone(m), Polygon.rectangle(0, -10, 10, 0), T10, 1, 1)
    assert c.fraction == 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_cell_fraction_bruteforce(seed):
    r = np.random.default_rng(seed)
    m = (r.random((60, 60)) < r.random()).astype(np.float32)
    m[r.random((60, 60)) < 0.05] = -9999
    poly = Polygon(((1.0, -2.0), (29.0, -1.0), (25.0, -29.0), (3.0, -20.0)))
    got = {(c.col, c.row): c.fraction for c in cell_shade_fraction(drone(m), poly, T10, 3, 3)}
    expect = {}
    for gr in range(3):
        for gc in range(3):
            cx, cy = 10 * gc + 5, -(10 * gr + 5)
            if not poly.contains(cx, cy):
                continue
            block = m[gr * 20:(gr + 1) * 20, gc * 20:(gc + 1) * 20]
            ok = block != -9999
            if ok.sum():
                expect[(gc, gr)] = float((block[ok] == 1).sum() / ok.sum())
    assert got.keys() == expect.keys()
    for k in got:
        assert got[k] == pytest.approx(expect[k], abs=1e-12)


def test_calibration_uniform_cocoa(rng):
    h = rng.uniform(2, 6, (40, 40))
    cal = threshold_calibration(drone(h), [Polygon.rectangle(0, -20, 20, 0)])
    assert cal.height_at_quantile < 8 and cal.fraction_below_threshold == 1.0
    srt = np.sort(h.ravel())
    assert cal.height_at_quantile == pytest.approx(srt[int(np.ceil(0.997 * srt.size)) - 1], rel=1e-6)


def test_calibration_constant():
    cal = threshold_calibration(drone(np.full((10, 10), 5.0)), [Polygon.rectangle(0, -5, 5, 0)])
    assert cal.height_at_quantile == 5.0


def test_calibration_counts_boundary_as_below():
    cal = calibrate_heights([8.0, 8.0, 9.0, 1.0])
    assert cal.fraction_below_threshold == 0.75


def test_nearest_rank_and_empty():
    assert nearest_rank([3, 1, 2], 0.5) == 2
    assert nearest_rank([3, 1, 2], 1.0) == 3
    with pytest.raises(EmptyDataError):
        calibrate_heights([])


def test_polygon_validation_and_wkt():
    with pytest.raises(GeometryError):
        Polygon(((0, 0), (1, 1), (1, 0), (0, 1)))
    with pytest.raises(GeometryError):
        Polygon(((0, 0), (1, 1)))
    p = Polygon(((0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)), (((1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)),))
    assert p.area == 15.0
    assert Polygon.from_wkt(p.to_wkt()) == p
    assert not p.contains(1.5, 1.5) and p.contains(3.0, 3.0) and p.contains(0.0, 2.0)


def test_farms_roundtrip(tmp_path):
    farms = [FarmRecord("f1", FARM, dt.date(2022, 1, 3), tmp_path / "a.cgrd", tmp_path / "b.cgrd")]
    write_farms(tmp_path / "farms.csv", farms)
    assert read_farms(tmp_path / "farms.csv") == farms
