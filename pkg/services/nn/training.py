"""
Seeded, single-stream training loop.

Per epoch: shuffle the train split with default_rng([seed, epoch]), build batches
(augment with the per-sample stream (seed, epoch, index), then normalize), forward,
smoothed loss, backward, SGD step; then evaluate on val with normalization only.
Batch preparation may run ahead on worker threads; its output does not depend on the
worker count.
"""
import csv
import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import settings, thread_count
from errors import DivergedLoss, NonFiniteError
from services.dataset.augment import apply_augment, draw_params, sample_rng
from services.dataset.manifest import BandStats, Manifest, normalize, normalize_batch
from services.nn.checkpoint import Checkpoint
from services.nn.evaluation import predict_logits
from services.nn.loss import cross_entropy_smoothed
from services.nn.model import ModelConfig, ResNetClassifier
from services.nn.optim import SGD, lr_at

logger = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr0: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0)
    weight_decay: float = Field(5e-4, ge=0)
    epochs: int = Field(300, ge=0)
    lr_drop_every: int = Field(100, gt=0)
    lr_drop_factor: float = Field(10.0, gt=0)
    batch_size: int = Field(512, gt=0)
    label_smoothing: float = Field(0.1, ge=0, le=1)
    seed: int = 0
    augment: bool = True
    eval_batch_size: int = Field(256, gt=0)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    metrics: List[EpochMetrics] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def summary(self) -> Dict[str, Any]:
        last = asdict(self.metrics[-1]) if self.metrics else None
        best = self.metrics[self.best_epoch] if self.best_epoch is not None else None
        return {
            "epochs_run": len(self.metrics),
            "best_epoch": self.best_epoch,
            "best_val_acc": best.val_acc if best else None,
            "final": last,
            "seed": self.final.train_meta.get("seed"),
            "arch": self.final.arch.descriptor(),
        }


def _prepare_sample(
    tile: np.ndarray, index: int, band_stats: BandStats, seed: int, epoch: int, augment: bool
) -> np.ndarray:
    if augment:
        tile = apply_augment(tile, draw_params(sample_rng(seed, epoch, index)))
    return normalize(tile, band_stats)


def iter_batches(
    tiles: np.ndarray,
    labels: np.ndarray,
    order: np.ndarray,
    batch_size: int,
    band_stats: BandStats,
    seed: int,
    epoch: int,
    augment: bool,
    pool: Optional[ThreadPoolExecutor] = None,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (x, y) batches in `order`; the next batch is prepared while the caller works."""
    starts = list(range(0, len(order), batch_size))

    def submit(start: int) -> List[Any]:
        idx = order[start : start + batch_size]
        if pool is None:
            return [_prepare_sample(tiles[i], int(i), band_stats, seed, epoch, augment) for i in idx]
        return [pool.submit(_prepare_sample, tiles[i], int(i), band_stats, seed, epoch, augment) for i in idx]

    pending = submit(starts[0]) if starts else []
    for b, start in enumerate(starts):
        current = pending
        if b + 1 < len(starts):
            pending = submit(starts[b + 1])
        items = [f.result() if isinstance(f, Future) else f for f in current]
        yield np.stack(items), labels[order[start : start + batch_size]]


def _eval_split(model: ResNetClassifier, x: np.ndarray, y: np.ndarray, alpha: float, batch_size: int) -> Tuple[float, float]:
    if x.shape[0] == 0:
        return float("nan"), float("nan")
    logits = predict_logits(model, x, batch_size)
    loss, _ = cross_entropy_smoothed(logits, y, alpha)
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def train(
    manifest: Manifest,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    pixel_size_m: Optional[float] = None,
    workers: Optional[int] = None,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Train a fresh model; returns final and best-val checkpoints plus per-epoch metrics."""
    train_tiles, train_labels = manifest.subset("train")
    val_idx = manifest.indices("val")
    val_x = normalize_batch(manifest.tiles(val_idx), manifest.band_stats)
    val_y = manifest.labels()[val_idx]
    if val_idx.size == 0:
        logger.warning("Manifest has no val split; best checkpoint will track the final epoch")

    seed = train_cfg.seed
    model = ResNetClassifier(model_cfg, seed=seed)
    opt = SGD(model, momentum=train_cfg.momentum, weight_decay=train_cfg.weight_decay)
    meta_base = {
        "seed": seed,
        "pixel_size_m": float(pixel_size_m if pixel_size_m is not None else settings.target_pixel_size_m),
        "train_config": train_cfg.model_dump(mode="json"),
    }
    logger.info(
        "Training %s parameters on %s samples (%s val) for %s epochs",
        model.param_count(),
        len(train_labels),
        val_idx.size,
        train_cfg.epochs,
    )

    def snapshot(epoch: Optional[int], extra: Dict[str, Any], with_momentum: bool = False) -> Checkpoint:
        meta = {**meta_base, "epoch": epoch, "rng": {"seed": seed, "next_epoch": 0 if epoch is None else epoch + 1}, **extra}
        momentum = opt.state.momentum_buffers if with_momentum else None
        return Checkpoint.from_model(model, manifest.band_stats, meta, momentum)

    metrics: List[EpochMetrics] = []
    best: Optional[Checkpoint] = None
    best_epoch: Optional[int] = None
    best_acc = -np.inf
    n_workers = workers or thread_count()
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        for epoch in range(train_cfg.epochs):
            lr = lr_at(epoch, train_cfg)
            order = np.random.default_rng([seed, epoch]).permutation(len(train_labels))
            loss_sum, correct, seen = 0.0, 0, 0
            batches = iter_batches(
                train_tiles, train_labels, order, train_cfg.batch_size, manifest.band_stats, seed, epoch, train_cfg.augment, pool
            )
            for b, (x, y) in enumerate(batches):
                try:
                    logits = model.forward(x, training=True)
                    loss, dlogits = cross_entropy_smoothed(logits, y, train_cfg.label_smoothing)
                    if not np.isfinite(loss):
                        raise NonFiniteError(f"loss is {loss}")
                    model.backward(dlogits)
                    opt.step(lr)
                except NonFiniteError as e:
                    raise DivergedLoss(f"Training diverged at epoch {epoch}, batch {b}: {e}", batch_index=b, epoch=epoch) from e
                loss_sum += loss * len(y)
                correct += int(np.sum(logits.argmax(axis=1) == y))
                seen += len(y)
                logger.debug("epoch %s batch %s loss %.6f", epoch, b, loss)

            val_loss, val_acc = _eval_split(model, val_x, val_y, train_cfg.label_smoothing, train_cfg.eval_batch_size)
            m = EpochMetrics(epoch, lr, loss_sum / seen, correct / seen, val_loss, val_acc)
            metrics.append(m)
            logger.info(
                "epoch %s lr %.5g train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f",
                epoch, lr, m.train_loss, m.train_acc, val_loss, val_acc,
            )
            score = val_acc if np.isfinite(val_acc) else -np.inf
            if best is None or score > best_acc:
                best_acc, best_epoch = score, epoch
                best = snapshot(epoch, {"val_acc": val_acc})
            if on_epoch:
                on_epoch(m)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if not metrics:
        init = snapshot(None, {})
        return TrainResult(final=init, best=init, metrics=[], best_epoch=None)
    if val_idx.size == 0:
        best_epoch = len(metrics) - 1
    final = snapshot(len(metrics) - 1, {"val_acc": metrics[-1].val_acc}, with_momentum=True)
    if val_idx.size == 0:
        best = final
    return TrainResult(final=final, best=best, metrics=metrics, best_epoch=best_epoch)


def metrics_rows(metrics: List[EpochMetrics]) -> List[List[str]]:
    return [METRICS_HEADER] + [[str(m.epoch), *(repr(float(v)) for v in (m.lr, m.train_loss, m.train_acc, m.val_loss, m.val_acc))] for m in metrics]


def write_metrics_csv(metrics: List[EpochMetrics], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(metrics_rows(metrics))
    return path
