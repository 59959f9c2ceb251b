"""
Single-pass 3x3 majority filter on the class-map grid.

Votes come from in-bounds, non-nodata cells of the window, center included; ties go to
the lowest class id; nodata cells stay nodata.
"""
import numpy as np
from scipy.ndimage import generic_filter

from config import N_CLASSES, NODATA_CLASS
from services.inference.classmap import ClassMap

_CENTER = 4


def _vote(window: np.ndarray) -> float:
    center = window[_CENTER]
    if center == NODATA_CLASS:
        return NODATA_CLASS
    votes = window[window != NODATA_CLASS].astype(np.int64)
    return float(np.bincount(votes, minlength=N_CLASSES).argmax())


def majority_filter_cells(cells: np.ndarray) -> np.ndarray:
    # out-of-bounds neighbours read as nodata and are excluded from the vote
    return generic_filter(cells, _vote, size=3, mode="constant", cval=NODATA_CLASS, output=np.uint8)


def majority_filter(cmap: ClassMap) -> ClassMap:
    return cmap.with_cells(majority_filter_cells(cmap.cells))
