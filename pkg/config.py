"""
Application configuration from environment variables, plus land-cover domain constants.
"""
import os
from typing import Dict, Optional, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict


# Class ids 0-4 in label order; 255 marks nodata cells in class maps
CLASS_NAMES: Tuple[str, ...] = ("Conifer", "Hardwood", "Shrub", "ReforestedTree", "Barren")
N_CLASSES = len(CLASS_NAMES)
NODATA_CLASS = 255

TILE_SIZE = 32
N_BANDS = 4  # R, G, B, NIR

# RGB triples for rendered maps; key NODATA_CLASS is the nodata colour
DEFAULT_PALETTE: Dict[int, Tuple[int, int, int]] = {
    0: (0, 100, 0),        # Conifer, dark green
    1: (144, 238, 144),    # Hardwood, light green
    2: (210, 180, 140),    # Shrub, tan
    3: (0, 205, 170),      # ReforestedTree, cyan-green
    4: (139, 69, 19),      # Barren, brown
    NODATA_CLASS: (0, 0, 0),
}

# Curation defaults; the thresholds are configurable per run
CURATION_DEFAULT_DENSITY_THRESHOLD = 0.6
CURATION_DEFAULT_NDVI_THRESHOLD = 0.2
CURATION_DEFAULT_NDVI_CLASSES: Tuple[int, ...] = (0, 1)  # Conifer, Hardwood

# Published curated dataset (per-class sample counts, total 103,849)
PUBLISHED_CLASS_COUNTS: Dict[str, int] = {
    "Conifer": 18_708,
    "Hardwood": 19_873,
    "Shrub": 24_430,
    "ReforestedTree": 21_701,
    "Barren": 19_137,
}
PUBLISHED_SPLIT_COUNTS: Dict[str, int] = {"train": 93_849, "val": 5_000, "test": 5_000}


class Settings(BaseSettings):
    """Settings loaded from environment (and .env)."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # Worker threads for curation, batch loading and tile classification (None = all cores)
    sylvan_threads: Optional[int] = None
    sylvan_output_base: Optional[str] = None  # run-log fallback; unset means no run logs
    sylvan_log_level: str = "INFO"

    # Common ground resolution (metres/pixel) all imagery is resampled to
    target_pixel_size_m: float = 0.6

    # Inference
    inference_batch_size: int = 256
    inference_strict_resolution: bool = False  # True: resolution mismatch is an error
    inference_nodata_max_fraction: float = 0.5  # tiles above this nodata share -> 255


settings = Settings()


def thread_count() -> int:
    """Worker count from SYLVAN_THREADS, else available cores."""
    n = getattr(settings, "sylvan_threads", None)
    if n is not None and n >= 1:
        return int(n)
    return max(1, os.cpu_count() or 1)
