"""
Tests for the residual classifier, checkpoints, evaluation and the training loop.
"""
import json
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from errors import ArchMismatch, BadMagic, ConfigError, DivergedLoss, EmptySampleSet, HeaderMismatch, ShapeMismatch
from services.dataset.manifest import BandStats, Manifest, normalize_batch
from services.nn.checkpoint import (
    CKPT_MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from services.nn.evaluation import (
    confusion_rows,
    evaluate,
    evaluate_manifest,
    evaluate_predictions,
    predict_logits,
    write_confusion_csv,
)
from services.nn.model import (
    ModelConfig,
    ResNetClassifier,
    analytic_param_count,
    expected_parameter_shapes,
    model_forward,
)
from services.nn.training import METRICS_HEADER, TrainConfig, train, write_metrics_csv


def _independent_param_count(cfg: ModelConfig) -> int:
    """Layer formulas: conv k*k*in*out, BN 2*C, projection 1x1 conv + BN, fc with bias."""
    k = 3 if cfg.stem == "cifar" else 7
    total = k * k * cfg.in_channels * cfg.stage_widths[0] + 2 * cfg.stage_widths[0]
    in_c = cfg.stage_widths[0]
    for s, (blocks, width) in enumerate(zip(cfg.stage_blocks, cfg.stage_widths)):
        for b in range(blocks):
            total += 9 * in_c * width + 2 * width + 9 * width * width + 2 * width
            if (s > 0 and b == 0) or in_c != width:
                total += in_c * width + 2 * width
            in_c = width
    return total + cfg.stage_widths[-1] * cfg.n_classes + cfg.n_classes


def _warm_model(cfg, seed=0):
    """Model whose BN layers have seen one training batch, so eval mode is usable."""
    model = ResNetClassifier(cfg, seed=seed)
    model.forward(np.random.default_rng(seed).standard_normal((8, 4, 32, 32)).astype(np.float32), training=True)
    return model


def _batch(n, seed=1):
    return np.random.default_rng(seed).standard_normal((n, 4, 32, 32)).astype(np.float32)


class TestModelConfig:
    def test_presets(self):
        assert ModelConfig.from_preset("r34").stage_blocks == [3, 4, 6, 3]
        assert ModelConfig.from_preset("compact", stem="imagenet", stage_widths=None).stem == "imagenet"
        with pytest.raises(ConfigError):
            ModelConfig.from_preset("r50")

    def test_rejects_bad_descriptor(self):
        with pytest.raises(ValueError):
            ModelConfig(stage_blocks=[1, 0, 1, 1])
        with pytest.raises(ValueError):
            ModelConfig(in_channels=3)


class TestModel:
    def test_output_shape(self, tiny_model_cfg):
        model = _warm_model(tiny_model_cfg)
        for n in (1, 3, 17):
            assert model_forward(_batch(n), model).shape == (n, 5)

    def test_imagenet_stem(self):
        cfg = ModelConfig(stem="imagenet", stage_widths=[4, 8, 8, 8])
        model = _warm_model(cfg)
        assert model_forward(_batch(2), model).shape == (2, 5)
        assert expected_parameter_shapes(cfg)[0] == ("stem.conv.weight", (4, 4, 7, 7))

    def test_eval_is_batch_independent(self, tiny_model_cfg):
        model = _warm_model(tiny_model_cfg)
        x = _batch(6)
        together = model_forward(x, model)
        for i in range(6):
            np.testing.assert_array_equal(model_forward(x[i : i + 1], model)[0], together[i])

    def test_predict_logits_ignores_batch_size(self, tiny_model_cfg):
        model = _warm_model(tiny_model_cfg)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 13))
            x = _batch(n, seed=seed)
            batch_size = int(rng.integers(1, n + 3))
            np.testing.assert_array_equal(predict_logits(model, x, batch_size), predict_logits(model, x, n))

    def test_eval_is_pure(self, tiny_model_cfg):
        model = _warm_model(tiny_model_cfg)
        before = model.state()
        x = _batch(4)
        with ThreadPoolExecutor(max_workers=4) as pool:
            outs = list(pool.map(lambda _: model_forward(x, model), range(4)))
        for out in outs[1:]:
            np.testing.assert_array_equal(out, outs[0])
        after = model.state()
        for name, value in before["buffers"].items():
            np.testing.assert_array_equal(after["buffers"][name], value)

    def test_compact_param_count(self):
        cfg = ModelConfig.from_preset("compact")
        assert _independent_param_count(cfg) == 4_901_253
        assert analytic_param_count(cfg) == 4_901_253
        assert ResNetClassifier(cfg).param_count() == 4_901_253

    def test_tiny_and_r34_counts_agree(self, tiny_model_cfg):
        for cfg in (tiny_model_cfg, ModelConfig(stage_blocks=[3, 4, 6, 3], stage_widths=[4, 8, 8, 16])):
            assert ResNetClassifier(cfg).param_count() == analytic_param_count(cfg) == _independent_param_count(cfg)

    def test_parameter_order_matches_descriptor(self, tiny_model_cfg):
        model = ResNetClassifier(tiny_model_cfg)
        got = [(n, p.shape) for n, p in model.named_parameters()]
        assert got == expected_parameter_shapes(tiny_model_cfg)

    def test_wrong_channels(self, tiny_model_cfg):
        with pytest.raises(ShapeMismatch):
            model_forward(np.zeros((1, 3, 32, 32), dtype=np.float32), _warm_model(tiny_model_cfg))

    def test_same_seed_same_init(self, tiny_model_cfg):
        a, b = ResNetClassifier(tiny_model_cfg, seed=5), ResNetClassifier(tiny_model_cfg, seed=5)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa, pb)


class TestCheckpoint:
    def _ckpt(self, cfg):
        return Checkpoint.from_model(
            _warm_model(cfg),
            BandStats(mean=(1.0, 2.0, 3.0, 4.0), std=(5.0, 6.0, 7.0, 8.0)),
            {"seed": 0, "pixel_size_m": 0.6, "epoch": 3},
        )

    def test_round_trip_is_bit_exact(self, tiny_model_cfg, tmp_path):
        ckpt = self._ckpt(tiny_model_cfg)
        path = save_checkpoint(ckpt, tmp_path / "m.ckpt")
        back = load_checkpoint(path)
        assert back.arch == ckpt.arch
        assert back.band_stats == ckpt.band_stats
        assert back.pixel_size_m == 0.6
        assert back.bn_tracked == ckpt.bn_tracked
        x = _batch(3)
        np.testing.assert_array_equal(model_forward(x, back.to_model()), model_forward(x, ckpt.to_model()))
        assert encode_checkpoint(back) == path.read_bytes()

    def test_momentum_blobs(self, tiny_model_cfg):
        model = _warm_model(tiny_model_cfg)
        momentum = {n: np.full(p.shape, 0.5, dtype=np.float32) for n, p in model.named_parameters()}
        ckpt = Checkpoint.from_model(model, BandStats.identity(), {}, momentum)
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert list(back.momentum) == list(momentum)
        np.testing.assert_array_equal(back.momentum["fc.bias"], momentum["fc.bias"])

    def test_descriptor_edited_to_r34(self, tiny_model_cfg):
        data = encode_checkpoint(self._ckpt(tiny_model_cfg))
        (hlen,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8 : 8 + hlen])
        header["arch"]["stage_blocks"] = [3, 4, 6, 3]
        new_header = json.dumps(header).encode()
        edited = CKPT_MAGIC + struct.pack("<I", len(new_header)) + new_header + data[8 + hlen :]
        with pytest.raises(ArchMismatch):
            decode_checkpoint(edited)

    def test_truncation(self, tiny_model_cfg):
        data = encode_checkpoint(self._ckpt(tiny_model_cfg))
        with pytest.raises(BadMagic):
            decode_checkpoint(data[:6])
        with pytest.raises(BadMagic):
            decode_checkpoint(data[:20])
        with pytest.raises(HeaderMismatch):
            decode_checkpoint(data[:-4])
        with pytest.raises(BadMagic):
            decode_checkpoint(b"R4B\x00" + data[4:])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestEvaluation:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 3, 4, 4])
        result = evaluate_predictions(labels, labels)
        assert result.accuracy == 1.0
        np.testing.assert_array_equal(result.confusion, np.diag([1, 1, 1, 1, 2]))

    def test_single_miss(self):
        labels = np.array([0, 1, 2, 3, 4, 0, 1])
        preds = labels.copy()
        preds[2] = 4
        result = evaluate_predictions(labels, preds)
        assert result.accuracy == 6 / 7
        off = result.confusion - np.diag(np.diag(result.confusion))
        assert off.sum() == 1 and off[2, 4] == 1
        assert result.recall[2] == 0.0 and result.precision[4] == 0.5

    def test_empty(self, tiny_model_cfg):
        with pytest.raises(EmptySampleSet):
            evaluate_predictions(np.array([], dtype=int), np.array([], dtype=int))
        with pytest.raises(EmptySampleSet):
            evaluate(_warm_model(tiny_model_cfg), np.zeros((0, 4, 32, 32), np.float32), np.array([], dtype=int))

    def test_deterministic_and_batch_size_free(self, tiny_model_cfg, small_synth_manifest):
        ckpt = Checkpoint.from_model(_warm_model(tiny_model_cfg), small_synth_manifest.band_stats)
        a = evaluate_manifest(ckpt, small_synth_manifest, "test", batch_size=7)
        b = evaluate_manifest(ckpt, small_synth_manifest, "test", batch_size=25)
        assert a.n == 25
        assert a.accuracy == b.accuracy
        np.testing.assert_array_equal(a.confusion, b.confusion)

    def test_confusion_csv(self, tmp_path):
        result = evaluate_predictions(np.array([0, 1, 1]), np.array([0, 1, 0]))
        rows = confusion_rows(result)
        assert rows[0][0] == "true\\pred" and rows[0][-1] == "recall"
        path = write_confusion_csv(result, tmp_path / "cm.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 7
        assert lines[2].startswith("Hardwood,1,1,0,0,0,0.500000")


class TestTraining:
    @pytest.fixture
    def quick(self):
        return TrainConfig(epochs=2, batch_size=16, lr0=0.05, eval_batch_size=16, seed=3)

    @pytest.fixture(scope="class")
    def tiny_manifest(self):
        from services.dataset.synthetic import synth_manifest

        return synth_manifest({"train": 40, "val": 10, "test": 10}, seed=2)

    def test_zero_epochs_returns_initialization(self, tiny_model_cfg, tiny_manifest):
        result = train(tiny_manifest, tiny_model_cfg, TrainConfig(epochs=0, seed=9))
        assert result.metrics == [] and result.best_epoch is None
        init = ResNetClassifier(tiny_model_cfg, seed=9).state()
        for name, value in init["params"].items():
            np.testing.assert_array_equal(result.final.params[name], value)
        assert result.final.band_stats == tiny_manifest.band_stats

    def test_bitwise_reproducible(self, tiny_model_cfg, tiny_manifest, quick):
        a = train(tiny_manifest, tiny_model_cfg, quick, workers=1)
        b = train(tiny_manifest, tiny_model_cfg, quick, workers=3)
        assert [m.train_loss for m in a.metrics] == [m.train_loss for m in b.metrics]
        assert [m.val_acc for m in a.metrics] == [m.val_acc for m in b.metrics]
        assert encode_checkpoint(a.final) == encode_checkpoint(b.final)

    def test_checkpoint_metadata(self, tiny_model_cfg, tiny_manifest, quick):
        result = train(tiny_manifest, tiny_model_cfg, quick, pixel_size_m=0.6)
        assert len(result.metrics) == 2
        assert [m.lr for m in result.metrics] == [0.05, 0.05]
        meta = result.final.train_meta
        assert meta["seed"] == 3 and meta["epoch"] == 1 and meta["pixel_size_m"] == 0.6
        assert meta["rng"] == {"seed": 3, "next_epoch": 2}
        assert result.final.momentum is not None
        assert result.best.train_meta["epoch"] == result.best_epoch
        assert result.best.momentum is None
        best_acc = max(m.val_acc for m in result.metrics)
        assert result.metrics[result.best_epoch].val_acc == best_acc
        assert result.metrics[result.best_epoch].val_acc > max([-1.0] + [m.val_acc for m in result.metrics[: result.best_epoch]])

    def test_diverged_loss(self, tiny_model_cfg, tiny_manifest, quick):
        broken = Manifest(
            samples=tiny_manifest.samples,
            splits=tiny_manifest.splits,
            band_stats=BandStats(mean=(0.0,) * 4, std=(1e-300,) * 4),
        )
        with np.errstate(all="ignore"):
            with pytest.raises(DivergedLoss) as info:
                train(broken, tiny_model_cfg, quick)
        assert info.value.batch_index == 0 and info.value.epoch == 0

    def test_metrics_csv(self, tiny_model_cfg, tiny_manifest, quick, tmp_path):
        result = train(tiny_manifest, tiny_model_cfg, quick)
        path = write_metrics_csv(result.metrics, tmp_path / "metrics.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER)
        assert len(lines) == 3 and lines[1].startswith("0,0.05,")

    def test_eval_on_trained_model(self, tiny_model_cfg, tiny_manifest, quick):
        result = train(tiny_manifest, tiny_model_cfg, quick)
        tiles, labels = tiny_manifest.subset("test")
        out = evaluate(result.final, normalize_batch(tiles, result.final.band_stats), labels)
        assert out.n == 10 and 0.0 <= out.accuracy <= 1.0
