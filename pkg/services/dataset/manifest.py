"""
Samples, band statistics, normalization and the JSON Lines manifest.

Manifest file: line 1 is the metadata record; each following line is one sample
{tile_file, offset, label, split, source_id, origin, mean_ndvi}. Tile payloads are raw
concatenated 4x32x32 blocks in manifest order, dtype as the source raster.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import CLASS_NAMES, N_BANDS, N_CLASSES, TILE_SIZE
from errors import DegenerateStats, EmptySampleSet, HeaderMismatch
from services.raster.r4b_format import canonical_json
from services.raster.types import DTYPES, Tile, dtype_tag

logger = logging.getLogger(__name__)

SPLITS: Tuple[str, ...] = ("train", "val", "test")
UNSPLIT = "unsplit"


@dataclass(eq=False)
class Sample:
    tile: Tile
    label: int
    source_id: str = ""
    mean_ndvi: float = 0.0


@dataclass(frozen=True)
class BandStats:
    """Per-band mean and population standard deviation (R, G, B, NIR)."""

    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != N_BANDS or len(self.std) != N_BANDS:
            raise HeaderMismatch(f"BandStats needs {N_BANDS} means and std-devs")

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "BandStats":
        return cls(mean=tuple(float(v) for v in data["mean"]), std=tuple(float(v) for v in data["std"]))

    @classmethod
    def identity(cls) -> "BandStats":
        return cls(mean=(0.0,) * N_BANDS, std=(1.0,) * N_BANDS)


def compute_band_stats(tiles: np.ndarray) -> BandStats:
    """Band statistics over a stack of (N, 4, H, W) tiles, in float64."""
    if tiles.shape[0] == 0:
        return BandStats.identity()
    data = tiles.astype(np.float64)
    mean = data.mean(axis=(0, 2, 3))
    std = data.std(axis=(0, 2, 3))
    return BandStats(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


def _stats_arrays(band_stats: BandStats) -> Tuple[np.ndarray, np.ndarray]:
    std = np.asarray(band_stats.std, dtype=np.float64)
    if np.any(std <= 0):
        raise DegenerateStats(f"Band standard deviations must be positive, got {band_stats.std}")
    mean = np.asarray(band_stats.mean, dtype=np.float64)
    return mean.reshape(N_BANDS, 1, 1), std.reshape(N_BANDS, 1, 1)


def normalize(tile: Union[Tile, np.ndarray], band_stats: BandStats, dtype: Any = np.float32) -> np.ndarray:
    """out[c] = (tile[c] - mean[c]) / std[c]; returns a (4, 32, 32) array of dtype."""
    data = tile.data if isinstance(tile, Tile) else np.asarray(tile)
    mean, std = _stats_arrays(band_stats)
    return ((data.astype(np.float64) - mean) / std).astype(dtype)


def normalize_batch(tiles: np.ndarray, band_stats: BandStats, dtype: Any = np.float32) -> np.ndarray:
    """normalize() over an (N, 4, H, W) stack."""
    mean, std = _stats_arrays(band_stats)
    return ((tiles.astype(np.float64) - mean[np.newaxis]) / std[np.newaxis]).astype(dtype)


@dataclass(eq=False)
class Manifest:
    """Curated sample set with split tags (None = unsplit) and train band statistics."""

    samples: List[Sample]
    splits: List[Optional[str]]
    band_stats: BandStats
    curation_config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.splits) != len(self.samples):
            raise HeaderMismatch("Manifest needs one split tag per sample")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dtype(self) -> np.dtype:
        if not self.samples:
            return np.dtype("u1")
        return self.samples[0].tile.data.dtype

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def indices(self, split: Optional[str]) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.splits) if t == split], dtype=np.int64)

    def tiles(self, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """Stack tile payloads as (N, 4, 32, 32) in source dtype."""
        idx = range(len(self.samples)) if indices is None else indices
        arrays = [self.samples[i].tile.data for i in idx]
        if not arrays:
            return np.zeros((0, N_BANDS, TILE_SIZE, TILE_SIZE), dtype=self.dtype)
        return np.stack(arrays)

    def subset(self, split: str) -> Tuple[np.ndarray, np.ndarray]:
        """(tiles, labels) of one split."""
        idx = self.indices(split)
        if idx.size == 0:
            raise EmptySampleSet(f"Manifest has no {split!r} samples")
        return self.tiles(idx), self.labels()[idx]

    def class_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.labels(), minlength=N_CLASSES) if self.samples else np.zeros(N_CLASSES, int)
        return {name: int(counts[i]) for i, name in enumerate(CLASS_NAMES)}

    def split_counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for tag in self.splits:
            key = tag or UNSPLIT
            out[key] = out.get(key, 0) + 1
        return out


# ----- Metadata record -----
class BandStatsRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mean: List[float] = Field(..., min_length=N_BANDS, max_length=N_BANDS)
    std: List[float] = Field(..., min_length=N_BANDS, max_length=N_BANDS)

    @model_validator(mode="after")
    def _positive_std(self) -> "BandStatsRecord":
        if any(v <= 0 for v in self.std):
            raise ValueError("band std-devs must be positive")
        return self


class ManifestMetadata(BaseModel):
    """Line 1 of a manifest file."""

    model_config = ConfigDict(extra="forbid")

    record: Literal["metadata"] = "metadata"
    format_version: int = 1
    total: int = Field(..., ge=0)
    class_counts: Dict[str, int]
    split_counts: Dict[str, int]
    band_stats: BandStatsRecord
    curation_config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    dtype: Literal["u8", "u16le"] = "u8"
    tile_size: Literal[32] = TILE_SIZE
    bands: Literal[4] = N_BANDS

    @model_validator(mode="after")
    def _consistent_counts(self) -> "ManifestMetadata":
        if set(self.class_counts) != set(CLASS_NAMES):
            raise ValueError(f"class_counts must name exactly {list(CLASS_NAMES)}")
        if any(v < 0 for v in self.class_counts.values()):
            raise ValueError("class counts must be non-negative")
        if sum(self.class_counts.values()) != self.total:
            raise ValueError("class_counts do not sum to total")
        unknown = set(self.split_counts) - set(SPLITS) - {UNSPLIT}
        if unknown:
            raise ValueError(f"unknown split tags {sorted(unknown)}")
        if sum(self.split_counts.values()) != self.total:
            raise ValueError("split_counts do not sum to total")
        return self

    def to_json_line(self) -> str:
        return canonical_json(self.model_dump(mode="json")).decode("utf-8")


def validate_metadata(record: Union[str, Dict[str, Any]]) -> ManifestMetadata:
    """Parse and validate a metadata record (JSON text or dict)."""
    try:
        data = json.loads(record) if isinstance(record, str) else record
        return ManifestMetadata.model_validate(data)
    except (json.JSONDecodeError, ValidationError) as e:
        raise HeaderMismatch(f"Invalid manifest metadata: {e}") from e


def manifest_metadata(manifest: Manifest) -> ManifestMetadata:
    _stats_arrays(manifest.band_stats)
    return ManifestMetadata(
        total=len(manifest),
        class_counts=manifest.class_counts(),
        split_counts=manifest.split_counts(),
        band_stats=BandStatsRecord(**manifest.band_stats.to_dict()),
        curation_config=manifest.curation_config,
        seed=manifest.seed,
        dtype=dtype_tag(manifest.dtype),
    )


def save_manifest(
    manifest: Manifest,
    path: Union[str, Path],
    tile_file: Optional[Union[str, Path]] = None,
) -> Tuple[Path, Path]:
    """
    Write manifest JSONL and tile payload (default: <path stem>.tiles next to it).
    Returns (manifest_path, tile_path). Output bytes depend only on the manifest.
    """
    path = Path(path)
    tile_path = Path(tile_file) if tile_file else path.with_suffix(".tiles")
    meta = manifest_metadata(manifest)
    block = N_BANDS * TILE_SIZE * TILE_SIZE * manifest.dtype.itemsize
    disk_dtype = DTYPES[meta.dtype]

    lines = [meta.to_json_line()]
    with open(tile_path, "wb") as payload:
        for i, (sample, tag) in enumerate(zip(manifest.samples, manifest.splits)):
            payload.write(sample.tile.data.astype(disk_dtype, copy=False).tobytes(order="C"))
            record = {
                "tile_file": tile_path.name,
                "offset": i * block,
                "label": int(sample.label),
                "split": tag,
                "source_id": sample.source_id,
                "mean_ndvi": float(sample.mean_ndvi),
                "origin": [int(sample.tile.origin_col), int(sample.tile.origin_row)],
            }
            lines.append(canonical_json(record).decode("utf-8"))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote manifest %s (%s samples) and payload %s", path, len(manifest), tile_path)
    return path, tile_path


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise HeaderMismatch(f"Empty manifest: {path}")
    meta = validate_metadata(lines[0])
    dtype = DTYPES[meta.dtype]
    block = N_BANDS * TILE_SIZE * TILE_SIZE * dtype.itemsize

    payloads: Dict[str, bytes] = {}
    samples: List[Sample] = []
    splits: List[Optional[str]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        name = rec["tile_file"]
        if name not in payloads:
            tile_path = path.parent / name
            if not tile_path.exists():
                raise FileNotFoundError(f"Tile payload not found: {tile_path}")
            payloads[name] = tile_path.read_bytes()
        buf = payloads[name]
        offset = int(rec["offset"])
        if offset + block > len(buf):
            raise HeaderMismatch(f"Sample at offset {offset} runs past end of {name}")
        data = np.frombuffer(buf, dtype=dtype, count=block // dtype.itemsize, offset=offset)
        data = data.reshape(N_BANDS, TILE_SIZE, TILE_SIZE).astype(dtype.newbyteorder("="))
        col, row = rec.get("origin", [0, 0])
        samples.append(
            Sample(
                tile=Tile(data=data, origin_col=int(col), origin_row=int(row)),
                label=int(rec["label"]),
                source_id=str(rec.get("source_id", "")),
                mean_ndvi=float(rec.get("mean_ndvi", 0.0)),
            )
        )
        splits.append(rec.get("split"))
    if len(samples) != meta.total:
        raise HeaderMismatch(f"Manifest declares {meta.total} samples but lists {len(samples)}")
    return Manifest(
        samples=samples,
        splits=splits,
        band_stats=BandStats.from_dict(meta.band_stats.model_dump()),
        curation_config=meta.curation_config,
        seed=meta.seed,
    )
