"""
Tests for label polygons and curation: coverage rule, density and NDVI filters,
overlap conflicts, nodata skipping and deterministic output.
"""
import json

import numpy as np
import pytest

from config import CLASS_NAMES
from errors import EmptyResult, InvalidInput, OverlapConflict
from services.dataset.curation import (
    CoverageRule,
    CurationConfig,
    curate,
    curate_with_stats,
    dataset_table,
    format_dataset_table,
)
from services.dataset.labels import (
    LabelPolygon,
    class_id_from_name,
    load_mask,
    load_polygons,
    points_in_any,
    polygons_to_geojson,
)
from services.dataset.manifest import save_manifest

# A 64x64 raster at 0.6 m with origin (0, 0) spans x in [0, 38.4], y in [-38.4, 0]
COVER_ALL = (-1.0, -40.0, 40.0, 1.0)


class TestLabelPolygon:
    def test_class_names_case_insensitive(self):
        assert class_id_from_name("shrub") == 2
        assert class_id_from_name("ReforestedTree") == 3
        with pytest.raises(InvalidInput):
            class_id_from_name("Palm")

    def test_rejects_open_ring(self):
        with pytest.raises(InvalidInput):
            LabelPolygon(rings=[[(0, 0), (1, 0), (1, 1), (0, 1)]], class_id=0)

    def test_rejects_density_out_of_range(self, square_ring):
        with pytest.raises(InvalidInput):
            LabelPolygon(rings=[square_ring(0, 0, 1, 1)], class_id=0, density=1.5)

    def test_boundary_points_are_outside(self, square_ring):
        p = LabelPolygon(rings=[square_ring(0, 0, 2, 2)], class_id=1)
        inside = p.contains_xy(np.array([1.0, 0.0, 2.0, 3.0]), np.array([1.0, 1.0, 1.0, 1.0]))
        assert inside.tolist() == [True, False, False, False]

    def test_hole_excludes_points(self, square_ring):
        p = LabelPolygon(rings=[square_ring(0, 0, 10, 10), square_ring(4, 4, 6, 6)], class_id=1)
        assert p.contains_xy(np.array([5.0, 2.0]), np.array([5.0, 2.0])).tolist() == [False, True]

    def test_geojson_round_trip(self, square_ring, tmp_path):
        polys = [
            LabelPolygon(rings=[square_ring(0, 0, 5, 5)], class_id=4, density=0.75),
            LabelPolygon(rings=[square_ring(10, 10, 20, 20)], class_id=0, density=1.0),
        ]
        path = tmp_path / "labels.geojson"
        path.write_text(json.dumps(polygons_to_geojson(polys)))
        back = load_polygons(path)
        assert [(p.class_id, p.density) for p in back] == [(4, 0.75), (0, 1.0)]
        assert back[0].rings == polys[0].rings

    def test_load_polygons_rejects_points(self, tmp_path):
        path = tmp_path / "bad.geojson"
        path.write_text(json.dumps({
            "type": "FeatureCollection",
            "features": [{"type": "Feature", "properties": {"class_name": "Shrub"}, "geometry": {"type": "Point", "coordinates": [0, 0]}}],
        }))
        with pytest.raises(InvalidInput):
            load_polygons(path)

    def test_mask_accepts_multipolygons(self, tmp_path):
        path = tmp_path / "fire.geojson"
        path.write_text(json.dumps({
            "type": "FeatureCollection",
            "features": [{
                "type": "Feature",
                "properties": {"name": "fire"},
                "geometry": {"type": "MultiPolygon", "coordinates": [
                    [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]],
                    [[[5, 5], [6, 5], [6, 6], [5, 6], [5, 5]]],
                ]},
            }],
        }))
        geoms = load_mask(path)
        assert points_in_any(geoms, np.array([0.5, 5.5, 3.0]), np.array([0.5, 5.5, 3.0])).tolist() == [True, True, False]


class TestCurate:
    def _poly(self, square_ring, class_name, density=1.0, box=COVER_ALL):
        return LabelPolygon(rings=[square_ring(*box)], class_id=class_id_from_name(class_name), density=density)

    def test_raster_inside_shrub_polygon_gives_four_samples(self, make_raster, square_ring):
        m = curate([make_raster(64, 64, seed=1)], [self._poly(square_ring, "Shrub")])
        assert len(m) == 4
        assert set(m.labels().tolist()) == {2}
        assert all(t is None for t in m.splits)
        assert [(s.tile.origin_col, s.tile.origin_row) for s in m.samples] == [(0, 0), (32, 0), (0, 32), (32, 32)]

    def test_density_filter(self, make_raster, square_ring):
        with pytest.raises(EmptyResult):
            curate([make_raster(64, 64)], [self._poly(square_ring, "Conifer", density=0.3)])
        m, stats = curate_with_stats(
            [make_raster(64, 64), make_raster(64, 64, seed=2, origin=(100.0, 0.0))],
            [
                self._poly(square_ring, "Conifer", density=0.3),
                self._poly(square_ring, "Barren", box=(99.0, -40.0, 140.0, 1.0)),
            ],
        )
        assert m.class_counts()["Conifer"] == 0
        assert m.class_counts()["Barren"] == 4
        assert stats.polygons_below_density == 1

    def test_ndvi_filter_applies_to_conifer_not_barren(self, make_raster, square_ring):
        flat = make_raster(64, 64, fill=(100, 90, 80, 100))  # NIR == R -> NDVI 0
        with pytest.raises(EmptyResult):
            curate([flat], [self._poly(square_ring, "Conifer")])
        m = curate([flat], [self._poly(square_ring, "Barren")], CurationConfig())
        assert len(m) == 4

    def test_ndvi_at_threshold_is_kept(self, make_raster, square_ring):
        flat = make_raster(64, 64, fill=(100, 90, 80, 100))  # NDVI exactly 0
        m, stats = curate_with_stats([flat], [self._poly(square_ring, "Conifer")], CurationConfig(ndvi_threshold=0.0))
        assert len(m) == 4 and stats.ndvi_filtered == 0
        with pytest.raises(EmptyResult):
            curate([flat], [self._poly(square_ring, "Conifer")], CurationConfig(ndvi_threshold=0.01))

    def test_conflicting_classes_discarded(self, make_raster, square_ring):
        raster = make_raster(64, 64, seed=3)
        with pytest.raises(OverlapConflict):
            curate([raster], [self._poly(square_ring, "Shrub"), self._poly(square_ring, "Barren")])
        # Left half is Shrub only; the right half overlaps a Barren polygon too
        m, stats = curate_with_stats(
            [raster],
            [self._poly(square_ring, "Shrub"), self._poly(square_ring, "Barren", box=(19.0, -40.0, 40.0, 1.0))],
        )
        assert stats.overlap_conflicts == 2
        assert [(s.tile.origin_col, s.label) for s in m.samples] == [(0, 2), (0, 2)]

    def test_same_class_overlap_yields_one_sample(self, make_raster, square_ring):
        m = curate([make_raster(64, 64, seed=4)], [self._poly(square_ring, "Shrub"), self._poly(square_ring, "Shrub")])
        assert len(m) == 4

    def test_partial_coverage_needs_all_points(self, make_raster, square_ring):
        # Polygon covers x < 30: only the first tile column (x 0..19.2) has all corners inside
        m = curate([make_raster(64, 64, seed=5)], [self._poly(square_ring, "Shrub", box=(-1.0, -40.0, 30.0, 1.0))])
        assert sorted({s.tile.origin_col for s in m.samples}) == [0]

    def test_center_only_rule(self, make_raster, square_ring):
        cfg = CurationConfig(coverage_rule=CoverageRule(require_corners=False))
        m = curate([make_raster(64, 64, seed=5)], [self._poly(square_ring, "Shrub", box=(-1.0, -40.0, 30.0, 1.0))], cfg)
        assert sorted({s.tile.origin_col for s in m.samples}) == [0, 32]

    def test_nodata_tiles_skipped(self, make_raster, square_ring):
        raster = make_raster(64, 64, seed=6, nodata=0)
        raster.pixels[raster.pixels == 0] = 1
        raster.pixels[:, 40, 40] = 0
        m, stats = curate_with_stats([raster], [self._poly(square_ring, "Shrub")])
        assert len(m) == 3
        assert stats.nodata_skipped == 1

    def test_source_ids_and_order(self, make_raster, square_ring):
        a = make_raster(64, 32, seed=7)
        b = make_raster(64, 32, seed=8)
        m = curate([a, b], [self._poly(square_ring, "Shrub")], source_ids=["north", "south"])
        assert [s.source_id for s in m.samples] == ["north", "north", "south", "south"]

    def test_deterministic_bytes(self, make_raster, square_ring, tmp_path):
        rasters = [make_raster(96, 64, seed=9), make_raster(64, 64, seed=10)]
        polys = [self._poly(square_ring, "Shrub", box=(-1.0, -40.0, 60.0, 1.0))]
        save_manifest(curate(rasters, polys), tmp_path / "a.jsonl")
        save_manifest(curate(rasters, polys), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes().replace(b"b.tiles", b"a.tiles")
        assert (tmp_path / "a.tiles").read_bytes() == (tmp_path / "b.tiles").read_bytes()

    def test_thread_count_does_not_change_output(self, make_raster, square_ring):
        rasters = [make_raster(64, 64, seed=s) for s in range(4)]
        polys = [self._poly(square_ring, "Shrub")]
        one, _ = curate_with_stats(rasters, polys, threads=1)
        many, _ = curate_with_stats(rasters, polys, threads=4)
        np.testing.assert_array_equal(one.tiles(), many.tiles())


class TestDatasetTable:
    def test_layout(self, make_raster, square_ring):
        poly = LabelPolygon(rings=[square_ring(*COVER_ALL)], class_id=2)
        m = curate([make_raster(64, 64, seed=1)], [poly])
        rows = dataset_table(m)
        assert [r["tree_type"] for r in rows] == [*CLASS_NAMES, "Total"]
        assert rows[2]["points"] == 4 and rows[-1]["points"] == 4
        text = format_dataset_table(m)
        assert "Tree type" in text and "Shrub" in text
