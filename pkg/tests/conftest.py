import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from canopy_ledger.raster import GeoTransform, RasterGrid  # noqa: E402


def make_grid(data, origin=(0.0, 0.0), px=10.0, nodata=-9999.0):
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    return RasterGrid(a, GeoTransform(origin[0], origin[1], px, -px), nodata, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
