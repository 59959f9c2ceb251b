"""
Batched eval-mode prediction, confusion matrix, accuracy and per-class precision/recall.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from config import CLASS_NAMES, N_CLASSES
from errors import EmptySampleSet
from services.dataset.manifest import Manifest, normalize_batch
from services.nn.checkpoint import Checkpoint
from services.nn.model import ResNetClassifier

logger = logging.getLogger(__name__)


def predict_logits(model: ResNetClassifier, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    if x.shape[0] == 0:
        return np.zeros((0, model.cfg.n_classes), dtype=model.dtype)
    chunks = [model.forward(x[i : i + batch_size], training=False) for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def predict(model: ResNetClassifier, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample; ties go to the lower class id."""
    return predict_logits(model, x, batch_size).argmax(axis=1)


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    return np.bincount(n_classes * labels + preds, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "n": self.n,
            "confusion": self.confusion.tolist(),
            "precision": dict(zip(CLASS_NAMES, (float(v) for v in self.precision))),
            "recall": dict(zip(CLASS_NAMES, (float(v) for v in self.recall))),
        }


def evaluate_predictions(labels: np.ndarray, preds: np.ndarray) -> EvalResult:
    if len(labels) == 0:
        raise EmptySampleSet("Cannot evaluate an empty sample set")
    cm = confusion_matrix(labels, preds)
    diag = np.diag(cm).astype(np.float64)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros(N_CLASSES), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(N_CLASSES), where=row > 0)
    return EvalResult(accuracy=float(np.trace(cm) / cm.sum()), confusion=cm, precision=precision, recall=recall)


def evaluate(
    checkpoint: Union[Checkpoint, ResNetClassifier],
    samples: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 256,
) -> EvalResult:
    """samples must already be normalized with the checkpoint's band statistics."""
    if len(labels) == 0:
        raise EmptySampleSet("Cannot evaluate an empty sample set")
    model = checkpoint.to_model() if isinstance(checkpoint, Checkpoint) else checkpoint
    return evaluate_predictions(labels, predict(model, samples, batch_size))


def evaluate_manifest(checkpoint: Checkpoint, manifest: Manifest, split: str = "test", batch_size: int = 256) -> EvalResult:
    tiles, labels = manifest.subset(split)
    result = evaluate(checkpoint, normalize_batch(tiles, checkpoint.band_stats), labels, batch_size)
    logger.info("Evaluated %s %s samples: accuracy %.4f", result.n, split, result.accuracy)
    return result


def confusion_rows(result: EvalResult) -> List[List[Any]]:
    rows: List[List[Any]] = [["true\\pred", *CLASS_NAMES, "recall"]]
    for i, name in enumerate(CLASS_NAMES):
        rows.append([name, *(int(v) for v in result.confusion[i]), f"{result.recall[i]:.6f}"])
    rows.append(["precision", *(f"{v:.6f}" for v in result.precision), f"{result.accuracy:.6f}"])
    return rows


def write_confusion_csv(result: EvalResult, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(confusion_rows(result))
    return path
