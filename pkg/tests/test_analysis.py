"""
Tests for area distributions, multi-year change reports and the SVG bar chart.
"""
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from shapely.geometry import Polygon

from config import CLASS_NAMES, NODATA_CLASS
from errors import GridMismatch, InvalidInput
from services.analysis.change import REPORT_HEADER, ChangeReport, change_report, report_rows, write_report_csv
from services.analysis.charts import BASELINE, PLOT_HEIGHT, render_bars, write_bars_svg
from services.analysis.distribution import area_distribution
from services.inference.classmap import ClassMap
from services.raster.types import GeoTransform

GEO = GeoTransform(origin_x=0.0, origin_y=100.0, pixel_size_x=10.0, pixel_size_y=10.0)
SVG_NS = "{http://www.w3.org/2000/svg}"


def _map(cells, year=None, geo=GEO):
    return ClassMap(cells=np.asarray(cells, dtype=np.uint8), geo=geo, year_tag=year)


def _bars(svg):
    root = ET.fromstring(svg)
    return [el for el in root.iter(f"{SVG_NS}rect") if el.get("class") == "bar"]


class TestAreaDistribution:
    def test_nodata_excluded_from_denominator(self):
        d = area_distribution(_map([[0, 0], [2, 255]]))
        assert d.fractions == (2 / 3, 0.0, 1 / 3, 0.0, 0.0)
        assert (d.valid_cells, d.nodata_cells) == (3, 1)
        assert d.cell_area == 100.0 and d.valid_area == 300.0

    def test_uniform_map(self):
        d = area_distribution(_map(np.full((4, 4), 4)))
        assert d.by_name()["Barren"] == 1.0
        assert sum(d.fractions) == 1.0

    def test_all_nodata(self):
        d = area_distribution(_map(np.full((2, 3), NODATA_CLASS)))
        assert d.fractions == (0.0,) * 5
        assert d.valid_cells == 0 and d.nodata_cells == 6

    def test_matches_direct_recount(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            cells = rng.integers(0, 5, size=tuple(int(v) for v in rng.integers(1, 12, size=2))).astype(np.uint8)
            cells[rng.random(cells.shape) < 0.2] = NODATA_CLASS
            d = area_distribution(_map(cells))
            valid = int((cells != NODATA_CLASS).sum())
            for k in range(5):
                expected = int((cells == k).sum()) / valid if valid else 0.0
                assert d.fractions[k] == expected
            if valid:
                assert abs(sum(d.fractions) - 1.0) <= 1e-9

    def test_relabeling_permutes_fractions(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            cells = rng.integers(0, 5, size=(6, 7)).astype(np.uint8)
            perm = rng.permutation(5)
            before = area_distribution(_map(cells)).fractions
            after = area_distribution(_map(perm[cells])).fractions
            for k in range(5):
                assert after[perm[k]] == before[k]

    def test_whole_map_mask_equals_no_mask(self):
        mask = [Polygon([(-1, -1), (1000, -1), (1000, 1000), (-1, 1000)])]
        for seed in range(200):
            rng = np.random.default_rng(seed)
            cells = rng.integers(0, 5, size=(5, 8)).astype(np.uint8)
            cells[rng.random(cells.shape) < 0.1] = NODATA_CLASS
            assert area_distribution(_map(cells), mask) == area_distribution(_map(cells))

    def test_mask_uses_cell_centers(self):
        # Cell centers are at x = 5, 15; a mask up to x = 10 keeps only the first column
        mask = [Polygon([(0, 0), (10, 0), (10, 100), (0, 100)])]
        d = area_distribution(_map([[1, 3], [1, 3]]), mask)
        assert d.counts == (0, 2, 0, 0, 0)
        assert d.fractions[1] == 1.0


class TestChangeReport:
    def test_identical_maps_have_zero_deltas(self):
        cells = [[0, 1], [2, 3]]
        report = change_report([_map(cells, "2009"), _map(cells, "2012")])
        assert report.deltas == ((0.0,) * 5,)

    def test_shrub_to_barren(self):
        report = change_report([_map(np.full((3, 3), 2), "2012"), _map(np.full((3, 3), 4), "2014")])
        assert report.delta("2014", "Shrub") == -1.0
        assert report.delta("2014", "Barren") == 1.0
        with pytest.raises(InvalidInput):
            report.delta("2012", "Shrub")

    def test_barren_expansion_fixture(self):
        before = np.zeros((10, 10), dtype=np.uint8)
        before.ravel()[:20] = 4
        before.ravel()[20:50] = 2
        after = before.copy()
        after.ravel()[50:68] = 4  # 18 conifer cells burn to barren
        report = change_report([_map(after, "2014"), _map(before, "2012")])
        assert report.years == ["2012", "2014"]
        assert report.delta("2014", "Barren") == pytest.approx(0.18, abs=1e-9)
        assert report.delta("2014", "Conifer") == pytest.approx(-0.18, abs=1e-9)

    def test_years_sorted_and_rows(self):
        rng = np.random.default_rng(0)
        maps = [_map(rng.integers(0, 5, (4, 4)), year) for year in ("2018", "2009", "2016", "2012")]
        report = change_report(maps)
        assert report.years == ["2009", "2012", "2016", "2018"]
        assert len(report.distributions) == 4 and len(report.deltas) == 3
        for row in report.deltas:
            assert abs(sum(row)) <= 1e-9

    def test_preconditions(self):
        a = _map([[0, 1]], "2009")
        with pytest.raises(InvalidInput):
            change_report([a])
        with pytest.raises(InvalidInput):
            change_report([a, _map([[0, 1]], "2009")])
        with pytest.raises(InvalidInput):
            change_report([a, _map([[0, 1]])])
        with pytest.raises(GridMismatch):
            change_report([a, _map([[0, 1, 2]], "2012")])
        with pytest.raises(GridMismatch):
            change_report([a, _map([[0, 1]], "2012", GeoTransform(1.0, 100.0, 10.0, 10.0))])

    def test_csv(self, tmp_path):
        report = change_report([_map([[0, 255]], "2012"), _map([[4, 4]], "2014")], mask_ref="fire.geojson")
        rows = report_rows(report)
        assert rows[0] == REPORT_HEADER
        assert rows[1] == ["2012", "Conifer", "1.000000", "", "1", "1"]
        assert rows[6] == ["2014", "Conifer", "0.000000", "-1.000000", "2", "0"]
        lines = write_report_csv(report, tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "year,class_name,fraction,delta_from_prev,valid_cells,nodata_cells"
        assert len(lines) == 11
        assert report.to_dict()["mask"] == "fire.geojson"


class TestBarChart:
    def _report(self, *fraction_rows):
        from services.analysis.distribution import AreaDistribution

        dists = tuple(
            AreaDistribution(str(2010 + i), tuple(f), (0,) * 5, 1, 0, 1.0) for i, f in enumerate(fraction_rows)
        )
        deltas = tuple(tuple(b - a for a, b in zip(p.fractions, c.fractions)) for p, c in zip(dists, dists[1:]))
        return ChangeReport(distributions=dists, deltas=deltas)

    def test_single_full_height_bar(self):
        bars = _bars(render_bars(self._report((1.0, 0.0, 0.0, 0.0, 0.0))))
        assert len(bars) == 5
        assert float(bars[0].get("height")) == PLOT_HEIGHT
        assert float(bars[0].get("y")) == BASELINE - PLOT_HEIGHT
        assert [float(b.get("height")) for b in bars[1:]] == [0.0] * 4

    def test_heights_proportional_to_fractions(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            rows = [tuple(rng.dirichlet(np.ones(5))) for _ in range(int(rng.integers(1, 5)))]
            bars = _bars(render_bars(self._report(*rows)))
            assert len(bars) == 5 * len(rows)
            for i, bar in enumerate(bars):
                fraction = rows[i // 5][i % 5]
                assert bar.get("data-class") == CLASS_NAMES[i % 5]
                assert abs(float(bar.get("height")) - fraction * PLOT_HEIGHT) <= 0.005 + 1e-9
                assert abs(float(bar.get("y")) + float(bar.get("height")) - BASELINE) <= 0.01 + 1e-9

    def test_deterministic_document(self, tmp_path):
        report = change_report([_map([[0, 2]], "2012"), _map([[4, 2]], "2014")])
        a = write_bars_svg(report, tmp_path / "a.svg").read_bytes()
        b = write_bars_svg(report, tmp_path / "b.svg").read_bytes()
        assert a == b
        root = ET.fromstring(a)
        assert root.get("width") == "800" and root.get("height") == "400"
        texts = [t.text for t in root.iter(f"{SVG_NS}text")]
        assert all(name in texts for name in CLASS_NAMES)
        assert "2012" in texts and "2014" in texts

    def test_markup_in_tags_and_title_is_escaped(self):
        report = change_report([_map([[0, 2]], "fire&flood"), _map([[4, 2]], "<2014>")])
        root = ET.fromstring(render_bars(report, title='Burn "A" & <B>'))
        texts = [t.text for t in root.iter(f"{SVG_NS}text")]
        assert texts[0] == 'Burn "A" & <B>'
        assert "fire&flood" in texts and "<2014>" in texts
        years = {el.get("data-year") for el in root.iter(f"{SVG_NS}rect") if el.get("class") == "bar"}
        assert years == {"fire&flood", "<2014>"}
