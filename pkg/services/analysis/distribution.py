"""
Per-class area distribution of a class map, optionally restricted to cells whose center
lies inside a region mask. Fractions are normalized by valid (non-nodata) cells;
nodata is counted separately.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry.base import BaseGeometry

from config import CLASS_NAMES, N_CLASSES, NODATA_CLASS
from services.dataset.labels import points_in_any
from services.inference.classmap import ClassMap


@dataclass(frozen=True)
class AreaDistribution:
    year_tag: Optional[str]
    fractions: Tuple[float, ...]
    counts: Tuple[int, ...]
    valid_cells: int
    nodata_cells: int
    cell_area: float  # square CRS units per cell, (32 * pixel size)^2

    @property
    def valid_area(self) -> float:
        return self.valid_cells * self.cell_area

    def by_name(self) -> Dict[str, float]:
        return dict(zip(CLASS_NAMES, self.fractions))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "year": self.year_tag,
            "fractions": self.by_name(),
            "counts": dict(zip(CLASS_NAMES, self.counts)),
            "valid_cells": self.valid_cells,
            "nodata_cells": self.nodata_cells,
            "cell_area": self.cell_area,
        }


def region_cells(cmap: ClassMap, mask: Optional[Sequence[BaseGeometry]]) -> np.ndarray:
    """Bool grid of the cells inside the mask (all cells when no mask)."""
    if mask is None:
        return np.ones(cmap.cells.shape, dtype=bool)
    xs, ys = cmap.cell_centers()
    return points_in_any(mask, xs, ys)


def area_distribution(cmap: ClassMap, mask: Optional[Sequence[BaseGeometry]] = None) -> AreaDistribution:
    selected = cmap.cells[region_cells(cmap, mask)]
    nodata = int(np.count_nonzero(selected == NODATA_CLASS))
    valid = selected[selected != NODATA_CLASS]
    counts = np.bincount(valid, minlength=N_CLASSES)[:N_CLASSES]
    if valid.size:
        fractions = tuple(float(c) / valid.size for c in counts)
    else:
        fractions = (0.0,) * N_CLASSES
    return AreaDistribution(
        year_tag=cmap.year_tag,
        fractions=fractions,
        counts=tuple(int(c) for c in counts),
        valid_cells=int(valid.size),
        nodata_cells=nodata,
        cell_area=float(cmap.geo.pixel_size_x * cmap.geo.pixel_size_y),
    )
