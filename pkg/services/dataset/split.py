"""
Seeded, class-stratified train/val/test split.
"""
import logging
from typing import Sequence

import numpy as np

from config import N_CLASSES
from errors import InsufficientSamples, InvalidInput
from services.dataset.manifest import Manifest, compute_band_stats

logger = logging.getLogger(__name__)


def allocate_stratified(class_counts: Sequence[int], n: int) -> np.ndarray:
    """
    Split n across classes proportionally to class_counts (largest remainder, ties to the
    lower class id). Exact integer arithmetic.
    """
    counts = [int(c) for c in class_counts]
    total = sum(counts)
    if total == 0:
        return np.zeros(len(counts), dtype=np.int64)
    base = [(n * c) // total for c in counts]
    remainders = [(n * c) % total for c in counts]
    leftover = n - sum(base)
    order = sorted(range(len(counts)), key=lambda k: (-remainders[k], k))
    for k in order[:leftover]:
        base[k] += 1
    return np.array(base, dtype=np.int64)


def split_tags(labels: np.ndarray, seed: int, n_val: int, n_test: int) -> np.ndarray:
    """Split tag ("train" | "val" | "test") per label; same inputs give the same tags."""
    labels = np.asarray(labels, dtype=np.int64)
    total = labels.size
    if n_val < 0 or n_test < 0:
        raise InvalidInput("n_val and n_test must be non-negative")
    if n_val + n_test >= total:
        raise InsufficientSamples(f"n_val + n_test = {n_val + n_test} must be < {total} samples")

    counts = np.bincount(labels, minlength=N_CLASSES)
    val_k = allocate_stratified(counts, n_val)
    test_k = allocate_stratified(counts, n_test)
    short = np.flatnonzero(val_k + test_k > counts)
    if short.size:
        raise InsufficientSamples(f"Classes {short.tolist()} are too small for the requested val/test sizes")

    tags = np.full(total, "train", dtype=object)
    rng = np.random.default_rng(seed)
    for k in range(len(counts)):
        members = rng.permutation(np.flatnonzero(labels == k))
        tags[members[: val_k[k]]] = "val"
        tags[members[val_k[k] : val_k[k] + test_k[k]]] = "test"
        if counts[k] and val_k[k] + test_k[k] == counts[k]:
            logger.warning("Class %s has no training samples left after the split", k)
    return tags


def split(manifest: Manifest, seed: int, n_val: int, n_test: int) -> Manifest:
    """New manifest with split tags and band statistics recomputed on the train split."""
    tags = split_tags(manifest.labels(), seed, n_val, n_test)
    train_idx = np.flatnonzero(tags == "train")
    band_stats = compute_band_stats(manifest.tiles(train_idx))
    logger.info(
        "Split %s samples: train %s, val %s, test %s (seed %s)",
        len(manifest), train_idx.size, n_val, n_test, seed,
    )
    return Manifest(
        samples=list(manifest.samples),
        splits=[str(t) for t in tags],
        band_stats=band_stats,
        curation_config=dict(manifest.curation_config),
        seed=int(seed),
    )
