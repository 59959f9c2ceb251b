"""
ClassMap: tile-resolution grid of class ids (255 = nodata) and its CMAP container:

    b"CMAP" | u32 LE header length | JSON {width_tiles, height_tiles, geo, year_tag, class_names}
    | width_tiles * height_tiles cell bytes, row-major
"""
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from config import CLASS_NAMES, N_CLASSES, NODATA_CLASS
from errors import BadMagic, HeaderMismatch, InvalidInput
from services.raster.r4b_format import canonical_json
from services.raster.types import GeoTransform

logger = logging.getLogger(__name__)

CMAP_MAGIC = b"CMAP"
_LEN = struct.Struct("<I")
_PREAMBLE = len(CMAP_MAGIC) + _LEN.size
VALID_CELLS = frozenset(range(N_CLASSES)) | {NODATA_CLASS}


@dataclass(eq=False)
class ClassMap:
    """cells has shape (height_tiles, width_tiles); geo pixel size is the tile footprint."""

    cells: np.ndarray
    geo: GeoTransform
    year_tag: Optional[str] = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.cells)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInput(f"ClassMap cells must be a non-empty 2-d grid, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.uint8) if arr.dtype != np.uint8 else np.ascontiguousarray(arr)
        bad = np.setdiff1d(np.unique(arr), np.fromiter(VALID_CELLS, dtype=np.uint8))
        if bad.size:
            raise InvalidInput(f"ClassMap cells hold invalid class ids {bad.tolist()}")
        self.cells = arr

    @property
    def width_tiles(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height_tiles(self) -> int:
        return int(self.cells.shape[0])

    def valid_mask(self) -> np.ndarray:
        return self.cells != NODATA_CLASS

    def with_cells(self, cells: np.ndarray) -> "ClassMap":
        return ClassMap(cells=cells, geo=self.geo, year_tag=self.year_tag)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """CRS coordinates (xs, ys) of every cell center, each shaped like cells."""
        cols, rows = np.meshgrid(np.arange(self.width_tiles), np.arange(self.height_tiles))
        xs = self.geo.origin_x + (cols + 0.5) * self.geo.pixel_size_x
        ys = self.geo.origin_y - (rows + 0.5) * self.geo.pixel_size_y
        return xs, ys

    def aligned_with(self, other: "ClassMap") -> bool:
        return self.cells.shape == other.cells.shape and self.geo == other.geo

    def same_as(self, other: "ClassMap") -> bool:
        return self.aligned_with(other) and self.year_tag == other.year_tag and np.array_equal(self.cells, other.cells)


def _header(cmap: ClassMap) -> Dict[str, Any]:
    return {
        "width_tiles": cmap.width_tiles,
        "height_tiles": cmap.height_tiles,
        "geo": cmap.geo.to_dict(),
        "year_tag": cmap.year_tag,
        "class_names": list(CLASS_NAMES),
    }


def encode_cmap(cmap: ClassMap) -> bytes:
    header = canonical_json(_header(cmap))
    return CMAP_MAGIC + _LEN.pack(len(header)) + header + cmap.cells.tobytes(order="C")


def decode_cmap(data: bytes) -> ClassMap:
    if len(data) < _PREAMBLE or data[: len(CMAP_MAGIC)] != CMAP_MAGIC:
        raise BadMagic("Not a CMAP file (expected magic 'CMAP')")
    (header_len,) = _LEN.unpack_from(data, len(CMAP_MAGIC))
    if _PREAMBLE + header_len > len(data):
        raise HeaderMismatch(f"Header length {header_len} exceeds file size {len(data)}")
    try:
        header = json.loads(data[_PREAMBLE : _PREAMBLE + header_len].decode("utf-8"))
        width, height = int(header["width_tiles"]), int(header["height_tiles"])
        geo = GeoTransform.from_dict(header["geo"])
        class_names = header["class_names"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise HeaderMismatch(f"Unreadable CMAP header: {e}") from e
    if list(class_names) != list(CLASS_NAMES):
        raise HeaderMismatch(f"CMAP class names {class_names} differ from {list(CLASS_NAMES)}")
    payload = data[_PREAMBLE + header_len :]
    if width < 1 or height < 1 or len(payload) != width * height:
        raise HeaderMismatch(f"CMAP header declares {width}x{height} cells but payload has {len(payload)} bytes")
    cells = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    year_tag = header.get("year_tag")
    return ClassMap(cells=cells, geo=geo, year_tag=None if year_tag is None else str(year_tag))


def write_cmap(cmap: ClassMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_cmap(cmap))
    logger.debug("Wrote class map %sx%s to %s", cmap.width_tiles, cmap.height_tiles, path)
    return path


def read_cmap(path: Union[str, Path]) -> ClassMap:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Class map not found: {path}")
    return decode_cmap(path.read_bytes())
