"""
Tests for the run configuration and the command-line surface: exit codes, overrides
and an end-to-end curate -> split -> train -> eval -> classify -> report run.
"""
import json
from unittest.mock import patch

import numpy as np
import pytest

from cli import main
from errors import ConfigError
from schemas import IOPaths, ModelSection, RunConfig, apply_override, load_run_config, require_inputs
from services.dataset.labels import LabelPolygon, polygons_to_geojson
from services.dataset.manifest import load_manifest
from services.inference.classmap import ClassMap, read_cmap, write_cmap
from services.nn.checkpoint import load_checkpoint
from services.raster.r4b_format import write_r4b
from services.raster.types import GeoTransform


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.train.lr0 == 0.1 and cfg.train.batch_size == 512 and cfg.train.epochs == 300
        assert (cfg.split.n_val, cfg.split.n_test) == (5000, 5000)
        assert cfg.model.build().stage_blocks == [1, 1, 1, 1]

    def test_overrides_parse_json(self):
        data = {}
        apply_override(data, "train.epochs=15")
        apply_override(data, "model.stage_widths=[4,8,8,8]")
        apply_override(data, "model.preset=r34")
        assert data == {"train": {"epochs": 15}, "model": {"stage_widths": [4, 8, 8, 8], "preset": "r34"}}
        cfg = RunConfig.model_validate(data)
        assert cfg.model.build().stage_blocks == [3, 4, 6, 3]

    def test_bad_overrides(self):
        with pytest.raises(ConfigError):
            apply_override({}, "train.epochs")
        with pytest.raises(ConfigError):
            apply_override({"train": 3}, "train.epochs=1")

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"epochs": 1, "learning_rate": 0.1}}))
        with pytest.raises(ConfigError):
            load_run_config(path)
        with pytest.raises(ConfigError):
            load_run_config(None, ["colour=green"])

    def test_missing_or_broken_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "bad.json")

    def test_require_inputs(self, tmp_path):
        cfg = RunConfig(io=IOPaths(rasters=[str(tmp_path / "a.r4b")]))
        with pytest.raises(ConfigError) as info:
            require_inputs(cfg, "rasters", "labels")
        assert "a.r4b" in str(info.value) and "io.labels (not set)" in str(info.value)

    def test_best_checkpoint_path(self):
        assert str(IOPaths(checkpoint="out/m.ckpt").best_checkpoint_path()) == "out/m.best.ckpt"
        assert str(IOPaths(best_checkpoint="b.ckpt").best_checkpoint_path()) == "b.ckpt"

    def test_invalid_model_section(self):
        with pytest.raises(ConfigError):
            ModelSection(stage_blocks=[1, 1, 1]).build()


class TestExitCodes:
    def test_usage_error_is_2(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["classify", "--raster", "r.r4b"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_is_2(self):
        with pytest.raises(SystemExit) as info:
            main(["fly"])
        assert info.value.code == 2

    def test_config_error_is_2(self, tmp_path, capsys):
        code = main(["curate", "--config", str(tmp_path / "absent.json")])
        assert code == 2
        assert "usage: sylvan curate" in capsys.readouterr().err

    def test_domain_error_is_1(self, tmp_path):
        code = main(["classify", "--checkpoint", str(tmp_path / "no.ckpt"), "--raster", "r.r4b", "--out", str(tmp_path / "m.cmap")])
        assert code == 1

    def test_bad_magic_is_1(self, tmp_path):
        (tmp_path / "m.cmap").write_bytes(b"nonsense")
        assert main(["filter", "--map", str(tmp_path / "m.cmap"), "--out", str(tmp_path / "f.cmap")]) == 1

    def test_bad_raster_header_is_1_without_traceback(self, tmp_path, caplog):
        header = b'{"bands":4,"crs":"","dtype":"u8","height":1,"nodata":null,"origin_x":"west","origin_y":0,"pixel_size_x":1,"pixel_size_y":1,"width":1}'
        (tmp_path / "bad.r4b").write_bytes(b"R4B1\n" + len(header).to_bytes(4, "little") + header + bytes(4))
        (tmp_path / "labels.geojson").write_text('{"type": "FeatureCollection", "features": []}')
        (tmp_path / "run.json").write_text(json.dumps({
            "io": {"rasters": [str(tmp_path / "bad.r4b")], "labels": str(tmp_path / "labels.geojson"),
                   "manifest": str(tmp_path / "m.jsonl")},
        }))
        assert main(["curate", "--config", str(tmp_path / "run.json")]) == 1
        assert any("HeaderMismatch" in r.getMessage() for r in caplog.records)
        assert all(r.exc_info is None for r in caplog.records)

    def test_selftest(self):
        assert main(["selftest", "--instances", "1", "--oracle-configs", "5"]) == 0


class TestSynth:
    def test_writes_dataset(self, tmp_path):
        out = tmp_path / "synth"
        assert main(["synth", "--out", str(out), "--train", "50", "--val", "10", "--test", "10", "--seed", "3"]) == 0
        m = load_manifest(out / "synthetic.jsonl")
        assert m.split_counts() == {"train": 50, "val": 10, "test": 10}
        rows = json.loads((out / "synthetic_layout.json").read_text())["rows"]
        assert np.asarray(rows).shape == (10, 10)
        assert (out / "synthetic_layout.r4b").exists()

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            main(["synth", "--out", str(tmp_path / name), "--train", "20", "--val", "5", "--test", "5"])
        for f in ("synthetic.jsonl", "synthetic.tiles", "synthetic_layout.r4b", "synthetic_layout.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestPipeline:
    @pytest.fixture
    def workspace(self, tmp_path, make_raster, square_ring):
        # 128x128 at 0.6 m: x in [0, 76.8]; left half Shrub, right half Barren
        write_r4b(make_raster(128, 128, seed=11), tmp_path / "site.r4b")
        polys = [
            LabelPolygon(rings=[square_ring(-1.0, -80.0, 38.5, 1.0)], class_id=2, density=0.9),
            LabelPolygon(rings=[square_ring(38.3, -80.0, 80.0, 1.0)], class_id=4, density=0.9),
        ]
        (tmp_path / "labels.geojson").write_text(json.dumps(polygons_to_geojson(polys)))
        config = {
            "split": {"seed": 1, "n_val": 2, "n_test": 2},
            "model": {"preset": "compact", "stage_widths": [4, 8, 8, 8]},
            "train": {"epochs": 1, "batch_size": 4, "lr0": 0.01, "eval_batch_size": 8},
            "io": {
                "rasters": [str(tmp_path / "site.r4b")],
                "labels": str(tmp_path / "labels.geojson"),
                "manifest": str(tmp_path / "manifest.jsonl"),
                "split_manifest": str(tmp_path / "manifest_split.jsonl"),
                "checkpoint": str(tmp_path / "model.ckpt"),
                "metrics": str(tmp_path / "metrics.csv"),
                "output_dir": str(tmp_path / "runs"),
            },
        }
        (tmp_path / "run.json").write_text(json.dumps(config))
        return tmp_path

    def test_end_to_end(self, workspace, capsys):
        run = ["--config", str(workspace / "run.json")]
        assert main(["curate", *run]) == 0
        table = capsys.readouterr().out
        assert "Shrub" in table and "Total" in table
        m = load_manifest(workspace / "manifest.jsonl")
        assert m.class_counts() == {"Conifer": 0, "Hardwood": 0, "Shrub": 8, "ReforestedTree": 0, "Barren": 8}

        assert main(["split", *run]) == 0
        assert load_manifest(workspace / "manifest_split.jsonl").split_counts() == {"train": 12, "val": 2, "test": 2}

        assert main(["train", *run, "--set", "train.seed=4"]) == 0
        ckpt = load_checkpoint(workspace / "model.ckpt")
        assert ckpt.train_meta["seed"] == 4 and ckpt.pixel_size_m == 0.6
        assert (workspace / "model.best.ckpt").exists()
        assert (workspace / "metrics.csv").read_text().startswith("epoch,lr,train_loss,train_acc,val_loss,val_acc\n")
        assert list((workspace / "runs" / "logs").glob("train_*.json"))

        capsys.readouterr()
        assert main(["eval", *run, "--out", str(workspace / "cm.csv")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n"] == 2 and 0.0 <= summary["accuracy"] <= 1.0
        assert (workspace / "cm.csv").exists()

        for year in ("2012", "2014"):
            code = main([
                "classify", "--checkpoint", str(workspace / "model.ckpt"), "--raster", str(workspace / "site.r4b"),
                "--out", str(workspace / f"{year}.cmap"), "--filter", "--year", year, "--batch-size", "3",
            ])
            assert code == 0
        cmap = read_cmap(workspace / "2012.cmap")
        assert cmap.cells.shape == (4, 4) and cmap.year_tag == "2012"

        maps = f"{workspace / '2014.cmap'},{workspace / '2012.cmap'}"
        assert main(["report", "--maps", maps, "--out", str(workspace / "report")]) == 0
        lines = (workspace / "report" / "report.csv").read_text().splitlines()
        assert len(lines) == 11 and lines[1].startswith("2012,Conifer,")
        assert all(line.split(",")[3] == "0.000000" for line in lines[6:])
        assert (workspace / "report" / "distribution.svg").exists()
        assert (workspace / "report" / "map_2012.ppm").read_bytes().startswith(b"P6\n4 4\n255\n")

        png = workspace / "map.png"
        assert main(["render", "--map", str(workspace / "2012.cmap"), "--out", str(workspace / "map.ppm"), "--png", str(png)]) == 0
        assert png.exists()

    def test_missing_inputs_is_config_error(self, workspace):
        assert main(["train", "--config", str(workspace / "run.json")]) == 2
        assert main(["curate", "--config", str(workspace / "run.json"), "--set", 'io.labels="nowhere.geojson"']) == 2


class TestReportOutputs:
    @pytest.fixture
    def maps(self, tmp_path):
        geo = GeoTransform(0.0, 0.0, 19.2, 19.2)
        paths = []
        for i, year in enumerate(("2012", "2016")):
            cells = np.random.default_rng(i).integers(0, 5, size=(6, 7)).astype(np.uint8)
            cells[0, 0] = 255
            paths.append(str(write_cmap(ClassMap(cells=cells, geo=geo, year_tag=year), tmp_path / f"{year}.cmap")))
        return ",".join(paths)

    @staticmethod
    def _tree(root):
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    def test_repeated_reports_are_byte_identical(self, tmp_path, maps):
        with patch("storage.settings") as s:
            s.sylvan_output_base = None
            for name in ("a", "b"):
                assert main(["report", "--maps", maps, "--out", str(tmp_path / name)]) == 0
        a, b = self._tree(tmp_path / "a"), self._tree(tmp_path / "b")
        assert sorted(a) == ["distribution.svg", "map_2012.ppm", "map_2016.ppm", "report.csv"]
        assert a == b

    def test_run_log_goes_to_log_dir_only(self, tmp_path, maps):
        out, logs = tmp_path / "report", tmp_path / "runlogs"
        assert main(["report", "--maps", maps, "--out", str(out), "--log-dir", str(logs)]) == 0
        assert not (out / "logs").exists()
        written = list((logs / "logs").glob("report_*.json"))
        assert len(written) == 1
        assert json.loads(written[0].read_text())["years"] == ["2012", "2016"]

    def test_train_without_log_dir_writes_declared_paths_only(self, tmp_path):
        from tasks.pipeline_tasks import run_synth, run_train

        synth = run_synth(str(tmp_path / "synth"), seed=2, sizes={"train": 10, "val": 5, "test": 5})
        cfg = load_run_config(overrides=[
            f'io.split_manifest="{synth["manifest"]}"',
            f'io.checkpoint="{tmp_path / "out" / "model.ckpt"}"',
            f'io.metrics="{tmp_path / "out" / "metrics.csv"}"',
            'model.stage_widths=[4,8,8,8]',
            "train.epochs=1",
            "train.batch_size=5",
        ])
        with patch("storage.settings") as s:
            s.sylvan_output_base = None
            summary = run_train(cfg)
        assert summary["log"] is None
        assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["metrics.csv", "model.best.ckpt", "model.ckpt"]
