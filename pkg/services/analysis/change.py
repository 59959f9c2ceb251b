"""
Multi-year change report: one AreaDistribution per year (ordered by year tag) and
per-class fraction deltas between consecutive years.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from shapely.geometry.base import BaseGeometry

from config import CLASS_NAMES
from errors import GridMismatch, InvalidInput
from services.analysis.distribution import AreaDistribution, area_distribution
from services.inference.classmap import ClassMap

logger = logging.getLogger(__name__)

REPORT_HEADER = ["year", "class_name", "fraction", "delta_from_prev", "valid_cells", "nodata_cells"]


@dataclass(frozen=True)
class ChangeReport:
    distributions: Tuple[AreaDistribution, ...]
    deltas: Tuple[Tuple[float, ...], ...]  # deltas[i] = fractions[i + 1] - fractions[i]
    mask_ref: Optional[str] = None

    @property
    def years(self) -> List[str]:
        return [str(d.year_tag) for d in self.distributions]

    def delta(self, year: str, class_name: str) -> float:
        i = self.years.index(year)
        if i == 0:
            raise InvalidInput(f"{year} is the first year of the report; it has no delta")
        return self.deltas[i - 1][CLASS_NAMES.index(class_name)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mask": self.mask_ref,
            "years": [d.to_dict() for d in self.distributions],
            "deltas": [dict(zip(CLASS_NAMES, row)) for row in self.deltas],
        }


def _year_key(tag: str) -> Tuple[int, Any]:
    try:
        return (0, int(tag))
    except ValueError:
        return (1, tag)


def change_report(
    maps: Sequence[ClassMap],
    mask: Optional[Sequence[BaseGeometry]] = None,
    mask_ref: Optional[str] = None,
) -> ChangeReport:
    if len(maps) < 2:
        raise InvalidInput(f"A change report needs at least 2 maps, got {len(maps)}")
    if any(m.year_tag is None for m in maps):
        raise InvalidInput("Every map in a change report needs a year_tag")
    tags = [str(m.year_tag) for m in maps]
    if len(set(tags)) != len(tags):
        raise InvalidInput(f"Duplicate year tags: {tags}")
    ref = maps[0]
    for m in maps[1:]:
        if not m.aligned_with(ref):
            raise GridMismatch(
                f"Map {m.year_tag} ({m.width_tiles}x{m.height_tiles}, {m.geo}) is not co-registered with "
                f"{ref.year_tag} ({ref.width_tiles}x{ref.height_tiles}, {ref.geo})"
            )
    ordered = sorted(maps, key=lambda m: _year_key(str(m.year_tag)))
    dists = tuple(area_distribution(m, mask) for m in ordered)
    deltas = tuple(
        tuple(b - a for a, b in zip(prev.fractions, cur.fractions)) for prev, cur in zip(dists, dists[1:])
    )
    for d in dists:
        if d.nodata_cells:
            logger.warning("Year %s: %s nodata cells excluded from fractions", d.year_tag, d.nodata_cells)
    return ChangeReport(distributions=dists, deltas=deltas, mask_ref=mask_ref)


def report_rows(report: ChangeReport) -> List[List[str]]:
    rows = [REPORT_HEADER]
    for i, dist in enumerate(report.distributions):
        for k, name in enumerate(CLASS_NAMES):
            delta = "" if i == 0 else f"{report.deltas[i - 1][k]:.6f}"
            rows.append(
                [str(dist.year_tag), name, f"{dist.fractions[k]:.6f}", delta, str(dist.valid_cells), str(dist.nodata_cells)]
            )
    return rows


def write_report_csv(report: ChangeReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(report_rows(report))
    return path
