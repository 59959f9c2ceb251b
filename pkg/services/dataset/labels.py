"""
Land-cover classes and labeled polygons: GeoJSON ingestion and vectorized point-in-polygon tests.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import Polygon, shape
from shapely.geometry.base import BaseGeometry

from config import CLASS_NAMES, N_CLASSES
from errors import InvalidInput

logger = logging.getLogger(__name__)

Ring = List[Tuple[float, float]]


def class_id_from_name(name: str) -> int:
    """Map a class name (case-insensitive) to its id."""
    lookup = {n.lower(): i for i, n in enumerate(CLASS_NAMES)}
    key = (name or "").strip().lower()
    if key not in lookup:
        raise InvalidInput(f"Unknown class name {name!r}; expected one of {list(CLASS_NAMES)}")
    return lookup[key]


def _ring(coords: Sequence[Sequence[float]]) -> Ring:
    return [(float(p[0]), float(p[1])) for p in coords]


@dataclass(eq=False)
class LabelPolygon:
    """Manually delineated polygon: outer ring plus optional holes, class and species density."""

    rings: List[Ring]
    class_id: int
    density: float = 1.0
    _geometry: BaseGeometry = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.rings:
            raise InvalidInput("LabelPolygon needs an outer ring")
        outer = self.rings[0]
        if len(outer) < 4 or outer[0] != outer[-1]:
            raise InvalidInput("Outer ring must be closed and have at least 4 points")
        if not 0 <= int(self.class_id) < N_CLASSES:
            raise InvalidInput(f"class_id must be in 0..{N_CLASSES - 1}, got {self.class_id}")
        if not 0.0 <= float(self.density) <= 1.0:
            raise InvalidInput(f"density must be in [0, 1], got {self.density}")
        self.class_id = int(self.class_id)
        self.density = float(self.density)
        self._geometry = Polygon(outer, self.rings[1:])
        shapely.prepare(self._geometry)

    @property
    def geometry(self) -> BaseGeometry:
        return self._geometry

    def contains_xy(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Strict interior test (boundary points are outside); holes follow even-odd."""
        return shapely.contains_xy(self._geometry, xs, ys)


def _read_feature_collection(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"GeoJSON not found: {path}")
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("type") != "FeatureCollection":
        raise InvalidInput(f"{path}: expected a GeoJSON FeatureCollection")
    return list(doc.get("features") or [])


def load_polygons(path: Union[str, Path]) -> List[LabelPolygon]:
    """
    Read labeled polygons: FeatureCollection of Polygon features with properties
    {"class_name": <one of the five names>, "density": number}.
    """
    polygons: List[LabelPolygon] = []
    for i, feature in enumerate(_read_feature_collection(path)):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise InvalidInput(f"Feature {i}: only Polygon geometries are supported, got {geom.get('type')}")
        props = feature.get("properties") or {}
        if "class_name" not in props:
            raise InvalidInput(f"Feature {i}: missing 'class_name' property")
        polygons.append(
            LabelPolygon(
                rings=[_ring(r) for r in geom.get("coordinates") or []],
                class_id=class_id_from_name(props["class_name"]),
                density=float(props.get("density", 1.0)),
            )
        )
    logger.info("Loaded %s label polygons from %s", len(polygons), path)
    return polygons


def polygons_to_geojson(polygons: Sequence[LabelPolygon]) -> Dict[str, Any]:
    """Inverse of load_polygons, for writing fixtures and synthetic label sets."""
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"class_name": CLASS_NAMES[p.class_id], "density": p.density},
                "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in r] for r in p.rings]},
            }
            for p in polygons
        ],
    }


def load_mask(path: Union[str, Path]) -> List[BaseGeometry]:
    """Read region mask geometries (e.g. fire perimeters): any Polygon / MultiPolygon features."""
    geoms: List[BaseGeometry] = []
    for i, feature in enumerate(_read_feature_collection(path)):
        geom = shape(feature.get("geometry") or {})
        if geom.geom_type not in ("Polygon", "MultiPolygon"):
            raise InvalidInput(f"Mask feature {i}: expected Polygon/MultiPolygon, got {geom.geom_type}")
        shapely.prepare(geom)
        geoms.append(geom)
    logger.info("Loaded %s mask geometries from %s", len(geoms), path)
    return geoms


def points_in_any(geoms: Sequence[BaseGeometry], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """True where a point lies strictly inside at least one geometry."""
    inside = np.zeros(np.shape(xs), dtype=bool)
    for geom in geoms:
        inside |= shapely.contains_xy(geom, xs, ys)
    return inside
