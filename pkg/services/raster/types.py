"""
Raster domain types: GeoTransform, Raster4B (band-sequential 4-band grid) and Tile.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from config import N_BANDS, TILE_SIZE
from errors import HeaderMismatch, InvalidInput, UnsupportedDtype

# R4B dtype tag -> numpy dtype (little-endian on disk)
DTYPES: Dict[str, np.dtype] = {
    "u8": np.dtype("u1"),
    "u16le": np.dtype("<u2"),
}


def dtype_tag(dtype: np.dtype) -> str:
    """Return the R4B tag ("u8" | "u16le") for a numpy dtype."""
    dt = np.dtype(dtype)
    if dt == np.uint8:
        return "u8"
    if dt == np.uint16:
        return "u16le"
    raise UnsupportedDtype(f"Unsupported raster dtype: {dt}")


@dataclass(frozen=True)
class GeoTransform:
    """
    Axis-aligned pixel -> CRS mapping. origin is the top-left corner of pixel (0, 0);
    x grows with columns, y decreases with rows (rows advance southward).
    """

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float

    def __post_init__(self) -> None:
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise InvalidInput(
                f"Pixel sizes must be positive, got ({self.pixel_size_x}, {self.pixel_size_y})"
            )

    def scaled(self, factor: float) -> "GeoTransform":
        """Same origin, pixel sizes multiplied by factor (e.g. tile grid = 32x pixel grid)."""
        return GeoTransform(
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            pixel_size_x=self.pixel_size_x * factor,
            pixel_size_y=self.pixel_size_y * factor,
        )

    def to_dict(self) -> Dict[str, float]:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "pixel_size_x": self.pixel_size_x,
            "pixel_size_y": self.pixel_size_y,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeoTransform":
        """Raises HeaderMismatch for missing, non-numeric or non-positive fields."""
        try:
            return cls(
                origin_x=float(data["origin_x"]),
                origin_y=float(data["origin_y"]),
                pixel_size_x=float(data["pixel_size_x"]),
                pixel_size_y=float(data["pixel_size_y"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise HeaderMismatch(f"Invalid geotransform {data!r}: {e}") from e


@dataclass(eq=False)
class Raster4B:
    """
    Georeferenced R,G,B,NIR pixel grid. pixels has shape (4, height, width),
    band-sequential and row-major per band, dtype uint8 or uint16.
    """

    pixels: np.ndarray
    geo: GeoTransform
    nodata: Optional[int] = None
    crs: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[0] != N_BANDS:
            raise InvalidInput(f"Raster pixels must have shape (4, H, W), got {arr.shape}")
        dtype_tag(arr.dtype)
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise InvalidInput(f"Raster must be at least 1x1, got {arr.shape[2]}x{arr.shape[1]}")
        if self.nodata is not None:
            info = np.iinfo(arr.dtype)
            if not (info.min <= int(self.nodata) <= info.max):
                raise InvalidInput(f"nodata {self.nodata} outside {arr.dtype} range")
            self.nodata = int(self.nodata)
        self.pixels = np.ascontiguousarray(arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def dtype(self) -> np.dtype:
        return self.pixels.dtype

    @property
    def dtype_name(self) -> str:
        return dtype_tag(self.pixels.dtype)

    def nodata_mask(self) -> np.ndarray:
        """(H, W) bool: True where any band holds the nodata value."""
        if self.nodata is None:
            return np.zeros((self.height, self.width), dtype=bool)
        return np.any(self.pixels == self.nodata, axis=0)

    def with_pixels(self, pixels: np.ndarray, geo: Optional[GeoTransform] = None) -> "Raster4B":
        return Raster4B(pixels=pixels, geo=geo or self.geo, nodata=self.nodata, crs=self.crs)

    def same_as(self, other: "Raster4B") -> bool:
        """Bit-identical pixels, dtype and metadata."""
        return (
            self.pixels.dtype == other.pixels.dtype
            and np.array_equal(self.pixels, other.pixels)
            and self.geo == other.geo
            and self.nodata == other.nodata
            and self.crs == other.crs
        )


@dataclass(eq=False)
class Tile:
    """A TILE_SIZE x TILE_SIZE x 4 patch, channel-major, with its pixel origin in the source raster."""

    data: np.ndarray
    origin_col: int = 0
    origin_row: int = 0

    def __post_init__(self) -> None:
        if self.data.shape != (N_BANDS, TILE_SIZE, TILE_SIZE):
            raise InvalidInput(
                f"Tile data must have shape {(N_BANDS, TILE_SIZE, TILE_SIZE)}, got {self.data.shape}"
            )
