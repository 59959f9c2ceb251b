"""
Synthetic land-cover data with known class signatures.

Class k has band means R = 160 - 25k, G = B = 100, NIR = 40 + 30k; pixels get additive
Gaussian noise (sigma 20), rounded and clipped to uint8.
"""
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import N_BANDS, N_CLASSES, TILE_SIZE
from services.dataset.manifest import Manifest, Sample, compute_band_stats
from services.raster.ndvi import mean_ndvi
from services.raster.types import GeoTransform, Raster4B, Tile

NOISE_SIGMA = 20.0
DEFAULT_SPLIT_SIZES: Dict[str, int] = {"train": 2500, "val": 500, "test": 500}


def class_signature(k: int) -> np.ndarray:
    """Band means (R, G, B, NIR) for class k."""
    return np.array([160.0 - 25.0 * k, 100.0, 100.0, 40.0 + 30.0 * k])


def synth_tiles(labels: np.ndarray, rng: np.random.Generator, noise_sigma: float = NOISE_SIGMA) -> np.ndarray:
    """(N, 4, 32, 32) uint8 tiles drawn around each label's signature."""
    labels = np.asarray(labels, dtype=np.int64)
    means = np.stack([class_signature(k) for k in range(N_CLASSES)])[labels]
    noise = rng.normal(0.0, noise_sigma, size=(labels.size, N_BANDS, TILE_SIZE, TILE_SIZE))
    values = means[:, :, np.newaxis, np.newaxis] + noise
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % N_CLASSES)


def synth_manifest(
    sizes: Optional[Dict[str, int]] = None,
    seed: int = 0,
    noise_sigma: float = NOISE_SIGMA,
) -> Manifest:
    """Balanced, pre-split manifest (train/val/test); band stats from the train split."""
    sizes = dict(DEFAULT_SPLIT_SIZES if sizes is None else sizes)
    rng = np.random.default_rng(seed)
    samples: List[Sample] = []
    splits: List[str] = []
    for split_name in ("train", "val", "test"):
        n = int(sizes.get(split_name, 0))
        labels = _balanced_labels(n, rng)
        tiles = synth_tiles(labels, rng, noise_sigma)
        for label, data in zip(labels, tiles):
            tile = Tile(data=data)
            samples.append(Sample(tile=tile, label=int(label), source_id=f"synthetic-{split_name}", mean_ndvi=mean_ndvi(tile)))
            splits.append(split_name)
    train_idx = [i for i, t in enumerate(splits) if t == "train"]
    band_stats = compute_band_stats(np.stack([samples[i].tile.data for i in train_idx]))
    return Manifest(
        samples=samples,
        splits=splits,
        band_stats=band_stats,
        curation_config={"synthetic": True, "noise_sigma": noise_sigma},
        seed=seed,
    )


def synth_layout(rows: int = 10, cols: int = 10, seed: int = 0) -> np.ndarray:
    """(rows, cols) grid of class ids, one per 32x32 block.

    Horizontal stripes of random class, each at least two blocks tall, so a
    3x3 majority filter leaves the layout unchanged.
    """
    rng = np.random.default_rng(seed)
    layout = np.empty((rows, cols), dtype=np.uint8)
    r = 0
    while r < rows:
        height = int(rng.integers(2, 5))
        if rows - (r + height) < 2:
            height = rows - r
        layout[r : r + height] = rng.integers(0, N_CLASSES)
        r += height
    return layout


def synth_raster(
    layout: np.ndarray,
    seed: int = 0,
    pixel_size: float = 0.6,
    origin: Tuple[float, float] = (0.0, 0.0),
    noise_sigma: float = NOISE_SIGMA,
) -> Raster4B:
    """Raster whose 32x32 blocks follow layout's class signatures."""
    rows, cols = layout.shape
    rng = np.random.default_rng(seed)
    tiles = synth_tiles(layout.ravel(), rng, noise_sigma)
    blocks = tiles.reshape(rows, cols, N_BANDS, TILE_SIZE, TILE_SIZE)
    pixels = blocks.transpose(2, 0, 3, 1, 4).reshape(N_BANDS, rows * TILE_SIZE, cols * TILE_SIZE)
    geo = GeoTransform(origin_x=origin[0], origin_y=origin[1], pixel_size_x=pixel_size, pixel_size_y=pixel_size)
    return Raster4B(pixels=pixels, geo=geo, nodata=None, crs="synthetic")


def nearest_mean_classifier(tiles: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-class centroids of tile band means, shape (K, 4)."""
    feats = tiles.astype(np.float64).mean(axis=(2, 3))
    return np.stack([feats[labels == k].mean(axis=0) for k in range(N_CLASSES)])


def nearest_mean_predict(centroids: np.ndarray, tiles: np.ndarray) -> np.ndarray:
    feats = tiles.astype(np.float64).mean(axis=(2, 3))
    dist = ((feats[:, np.newaxis, :] - centroids[np.newaxis, :, :]) ** 2).sum(axis=2)
    return dist.argmin(axis=1)


def nearest_mean_accuracy(manifest: Manifest, fit_split: str = "train", eval_split: str = "test") -> float:
    """Separability oracle: nearest band-mean centroid accuracy on eval_split."""
    train_tiles, train_labels = manifest.subset(fit_split)
    test_tiles, test_labels = manifest.subset(eval_split)
    centroids = nearest_mean_classifier(train_tiles, train_labels)
    return float((nearest_mean_predict(centroids, test_tiles) == test_labels).mean())
