"""
Pytest configuration and shared fixtures for the land-cover pipeline tests.
"""
import os
import sys
from typing import Callable, Optional, Tuple

import numpy as np
import pytest

# Ensure project root is on path
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from services.raster.types import GeoTransform, Raster4B  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "slow: full-scale acceptance run (set SYLVAN_RUN_SLOW=1 to enable).",
    )


@pytest.fixture
def make_raster() -> Callable[..., Raster4B]:
    """Factory: random (or constant) 4-band raster with a square pixel size."""

    def _make(
        width: int,
        height: int,
        dtype=np.uint8,
        seed: int = 0,
        fill: Optional[Tuple[int, int, int, int]] = None,
        nodata: Optional[int] = None,
        pixel_size: float = 0.6,
        origin: Tuple[float, float] = (0.0, 0.0),
    ) -> Raster4B:
        if fill is not None:
            pixels = np.empty((4, height, width), dtype=dtype)
            pixels[...] = np.asarray(fill, dtype=dtype)[:, None, None]
        else:
            hi = np.iinfo(dtype).max
            pixels = np.random.default_rng(seed).integers(0, hi, size=(4, height, width), endpoint=False).astype(dtype)
        geo = GeoTransform(origin[0], origin[1], pixel_size, pixel_size)
        return Raster4B(pixels=pixels, geo=geo, nodata=nodata, crs="EPSG:26910")

    return _make


@pytest.fixture
def square_ring() -> Callable[[float, float, float, float], list]:
    """Closed rectangular ring (x0, y0)-(x1, y1)."""

    def _ring(x0: float, y0: float, x1: float, y1: float) -> list:
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]

    return _ring


@pytest.fixture
def tiny_model_cfg():
    """Compact preset with narrow stages: fast enough for unit tests."""
    from services.nn.model import ModelConfig

    return ModelConfig(stage_blocks=[1, 1, 1, 1], stage_widths=[4, 8, 8, 8])


@pytest.fixture(scope="session")
def small_synth_manifest():
    """Balanced, pre-split synthetic manifest (100 / 25 / 25)."""
    from services.dataset.synthetic import synth_manifest

    return synth_manifest({"train": 100, "val": 25, "test": 25}, seed=0)


@pytest.fixture
def skip_unless_slow():
    """Skip the test unless SYLVAN_RUN_SLOW=1 (full-scale acceptance runs)."""
    if os.environ.get("SYLVAN_RUN_SLOW", "").strip() not in ("1", "true", "yes"):
        pytest.skip("SYLVAN_RUN_SLOW not set; skipping full-scale acceptance run")
