"""
Training augmentation: random flips, right-angle rotation, reflect-pad + random crop.
Draws come from a caller-supplied generator so results do not depend on scheduling.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import TILE_SIZE
from services.dataset.manifest import Sample
from services.raster.types import Tile

CROP_PAD = 4


@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    k: int = 0  # rotation by k * 90 degrees
    crop_row: int = CROP_PAD  # window offset in the padded tile; CROP_PAD = centered
    crop_col: int = CROP_PAD


IDENTITY = AugmentParams()


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, sample index)."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])


def draw_params(rng: np.random.Generator) -> AugmentParams:
    """Draw order is fixed: flip_h, flip_v, k, crop_row, crop_col."""
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))
    crop_row, crop_col = (int(v) for v in rng.integers(0, 2 * CROP_PAD + 1, size=2))
    return AugmentParams(flip_h=flip_h, flip_v=flip_v, k=k, crop_row=crop_row, crop_col=crop_col)


def apply_augment(data: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply params to a (C, H, W) array; every band is transformed identically."""
    out = data
    if params.flip_h:
        out = out[:, :, ::-1]
    if params.flip_v:
        out = out[:, ::-1, :]
    if params.k % 4:
        out = np.rot90(out, k=params.k, axes=(1, 2))
    padded = np.pad(out, ((0, 0), (CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD)), mode="reflect")
    r, c = params.crop_row, params.crop_col
    return np.ascontiguousarray(padded[:, r : r + TILE_SIZE, c : c + TILE_SIZE])


def augment(sample: Sample, rng: np.random.Generator, params: Optional[AugmentParams] = None) -> Sample:
    """Augmented copy of sample; label and provenance unchanged."""
    params = params or draw_params(rng)
    data = apply_augment(sample.tile.data, params)
    return Sample(
        tile=Tile(data=data, origin_col=sample.tile.origin_col, origin_row=sample.tile.origin_row),
        label=sample.label,
        source_id=sample.source_id,
        mean_ndvi=sample.mean_ndvi,
    )
