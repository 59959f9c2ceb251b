"""
Class map rendering: binary PPM (P6), one pixel per cell, and a matplotlib PNG preview
with optional mask outlines.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from shapely.geometry.base import BaseGeometry

from config import CLASS_NAMES, DEFAULT_PALETTE, N_CLASSES, NODATA_CLASS
from errors import InvalidInput
from services.inference.classmap import ClassMap

logger = logging.getLogger(__name__)

Palette = Dict[int, Tuple[int, int, int]]


def palette_lut(palette: Optional[Palette] = None) -> np.ndarray:
    """(256, 3) uint8 lookup; palette must cover classes 0..4 and nodata."""
    palette = DEFAULT_PALETTE if palette is None else palette
    missing = [k for k in (*range(N_CLASSES), NODATA_CLASS) if k not in palette]
    if missing:
        raise InvalidInput(f"Palette lacks colors for class ids {missing}")
    lut = np.zeros((256, 3), dtype=np.uint8)
    for class_id, rgb in palette.items():
        lut[int(class_id)] = np.asarray(rgb, dtype=np.uint8)
    return lut


def render_rgb(cmap: ClassMap, palette: Optional[Palette] = None) -> np.ndarray:
    """(height_tiles, width_tiles, 3) uint8 image."""
    return palette_lut(palette)[cmap.cells]


def encode_ppm(cmap: ClassMap, palette: Optional[Palette] = None) -> bytes:
    header = f"P6\n{cmap.width_tiles} {cmap.height_tiles}\n255\n".encode("ascii")
    return header + render_rgb(cmap, palette).tobytes(order="C")


def render_map(cmap: ClassMap, path: Union[str, Path], palette: Optional[Palette] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(cmap, palette))
    logger.info("Rendered %sx%s class map to %s", cmap.width_tiles, cmap.height_tiles, path)
    return path


def render_png(
    cmap: ClassMap,
    path: Union[str, Path],
    mask: Optional[Sequence[BaseGeometry]] = None,
    palette: Optional[Palette] = None,
    title: Optional[str] = None,
) -> Path:
    """Georeferenced preview with a class legend; mask polygon exteriors drawn in red."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Patch

    lut = palette_lut(palette)
    geo = cmap.geo
    extent = (
        geo.origin_x,
        geo.origin_x + cmap.width_tiles * geo.pixel_size_x,
        geo.origin_y - cmap.height_tiles * geo.pixel_size_y,
        geo.origin_y,
    )
    fig, ax = plt.subplots(figsize=(10, 8))
    ax.imshow(lut[cmap.cells], origin="upper", extent=extent, interpolation="nearest")
    for geom in mask or ():
        polygons = getattr(geom, "geoms", [geom])
        for poly in polygons:
            xs, ys = poly.exterior.xy
            ax.plot(xs, ys, color="red", linewidth=1.5)
    handles = [Patch(color=lut[k] / 255.0, label=name) for k, name in enumerate(CLASS_NAMES)]
    handles.append(Patch(color=lut[NODATA_CLASS] / 255.0, label="nodata"))
    ax.legend(handles=handles, loc="upper right", fontsize="small")
    ax.set_title(title or (f"Land cover {cmap.year_tag}" if cmap.year_tag else "Land cover"))
    plt.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(path, dpi=150, bbox_inches="tight", facecolor="white")
    plt.close(fig)
    logger.info("Rendered PNG preview to %s", path)
    return path
