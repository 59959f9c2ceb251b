"""
Check-mode verification: analytic backward vs 64-bit central finite differences for every
layer, the optimized convolution vs the direct-loop oracle, and the fixed numeric fixtures
(label smoothing, uniform-logit loss, learning-rate schedule).
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from services.nn import functional as F
from services.nn.layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBlock,
)
from services.nn.loss import cross_entropy_smoothed, smooth_labels, softmax
from services.nn.optim import lr_at
from services.nn.tensor import CHECK_DTYPE
from services.nn.training import TrainConfig

logger = logging.getLogger(__name__)

REL_STEP = 1e-5
TOLERANCE = 1e-6
RELU_MARGIN = 5e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def numerical_gradient(
    f: Callable[[], float], arr: np.ndarray, coords: Optional[Sequence[int]] = None, rel_step: float = REL_STEP
) -> np.ndarray:
    """Central differences of scalar f() w.r.t. arr (perturbed in place, then restored)."""
    flat = arr.reshape(-1)
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size) if coords is None else coords:
        old = float(flat[i])
        h = rel_step * max(1.0, abs(old))
        flat[i] = old + h
        up, fp = float(flat[i]), f()
        flat[i] = old - h
        down, fm = float(flat[i]), f()
        flat[i] = old
        grad[i] = (fp - fm) / (up - down)
    return grad.reshape(arr.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_layer(
    name: str,
    layer: Layer,
    x: np.ndarray,
    rng: np.random.Generator,
    max_coords: Optional[int] = None,
) -> CheckResult:
    """Compare d(sum(layer(x) * R)) against finite differences for x and every parameter."""
    out = layer.forward(x, training=True)
    weights = rng.standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(layer.forward(x, training=True) * weights))

    layer.forward(x, training=True)
    dx = layer.backward(weights.copy())
    targets = {"input": (x, dx)}
    for pname, grad in layer.named_gradients():
        targets[pname] = (dict(layer.named_parameters())[pname], grad.copy())

    worst, worst_name = 0.0, ""
    for tname, (arr, analytic) in targets.items():
        coords = None
        if max_coords is not None and arr.size > max_coords:
            coords = rng.choice(arr.size, size=max_coords, replace=False)
        numeric = numerical_gradient(objective, arr, coords)
        if coords is not None:
            analytic = analytic.reshape(-1)[coords]
            numeric = numeric.reshape(-1)[coords]
        err = relative_error(analytic, numeric)
        if err > worst:
            worst, worst_name = err, tname
    return CheckResult(name, worst < TOLERANCE, f"max relative error {worst:.3e} ({worst_name or 'all'})")


def _away_from_zero(x: np.ndarray, margin: float = 0.01) -> np.ndarray:
    return x + np.where(x >= 0, margin, -margin)


def _separated(rng: np.random.Generator, shape) -> np.ndarray:
    """Distinct values spaced 0.01 apart, so window maxima are never near-ties."""
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(CHECK_DTYPE) * 0.01 - n * 0.005).reshape(shape)


def _block_relu_margin(block: ResidualBlock, x: np.ndarray) -> float:
    a = block.bn1.forward(block.conv1.forward(x, True), True)
    z = block.bn2.forward(block.conv2.forward(np.maximum(a, 0), True), True)
    skip = x if block.shortcut is None else block.shortcut.forward(x, True)
    return float(min(np.abs(a).min(), np.abs(z + skip).min()))


def _randomize_bn(layer: Layer, rng: np.random.Generator) -> None:
    for _, module in layer.named_modules():
        if isinstance(module, BatchNorm2d):
            module.params["weight"][...] = rng.uniform(0.5, 1.5, module.params["weight"].shape)
            module.params["bias"][...] = rng.uniform(-0.5, 0.5, module.params["bias"].shape)


def _layer_cases(rng: np.random.Generator) -> Dict[str, Callable[[], CheckResult]]:
    d = CHECK_DTYPE

    def conv() -> CheckResult:
        k = int(rng.choice([1, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        layer = Conv2d(int(rng.integers(1, 4)), int(rng.integers(1, 5)), k, stride, pad, rng, d)
        x = rng.standard_normal((2, layer.params["weight"].shape[1], 5, 5))
        return check_layer("conv2d", layer, x, rng)

    def bn() -> CheckResult:
        layer = BatchNorm2d(3, d)
        _randomize_bn(layer, rng)
        return check_layer("batchnorm", layer, rng.standard_normal((4, 3, 3, 3)) * 2 + 1, rng)

    def relu() -> CheckResult:
        return check_layer("relu", ReLU(), _away_from_zero(rng.standard_normal((2, 3, 4, 4))), rng)

    def maxpool() -> CheckResult:
        return check_layer("maxpool", MaxPool2d(3, 2, 1), _separated(rng, (2, 3, 5, 5)), rng)

    def avgpool() -> CheckResult:
        return check_layer("avgpool", GlobalAvgPool(), rng.standard_normal((2, 3, 4, 4)), rng)

    def linear() -> CheckResult:
        return check_layer("linear", Linear(6, 5, rng, d), rng.standard_normal((3, 6)), rng)

    def block(stride: int, out_c: int) -> Callable[[], CheckResult]:
        def run() -> CheckResult:
            while True:
                layer = ResidualBlock(8, out_c, stride, rng, d)
                _randomize_bn(layer, rng)
                x = rng.standard_normal((2, 8, 4, 4))
                if _block_relu_margin(layer, x) > RELU_MARGIN:
                    break
            name = "residual_block" if layer.shortcut is None else "residual_block_projection"
            return check_layer(name, layer, x, rng, max_coords=64)

        return run

    def loss() -> CheckResult:
        logits = rng.standard_normal((4, 5)) * 2
        labels = rng.integers(0, 5, 4)
        alpha = float(rng.uniform(0, 1))
        _, analytic = cross_entropy_smoothed(logits, labels, alpha)
        numeric = numerical_gradient(lambda: cross_entropy_smoothed(logits, labels, alpha)[0], logits)
        err = relative_error(analytic, numeric)
        return CheckResult("cross_entropy_smoothed", err < TOLERANCE, f"max relative error {err:.3e}")

    return {
        "conv2d": conv,
        "batchnorm": bn,
        "relu": relu,
        "maxpool": maxpool,
        "avgpool": avgpool,
        "linear": linear,
        "residual_block": block(1, 8),
        "residual_block_projection": block(2, 16),
        "cross_entropy_smoothed": loss,
    }


def gradient_checks(instances: int = 20, seed: int = 0) -> List[CheckResult]:
    """One aggregated result per layer kind over `instances` random cases."""
    rng = np.random.default_rng(seed)
    results = []
    for name, case in _layer_cases(rng).items():
        failures = [r for r in (case() for _ in range(instances)) if not r.passed]
        detail = f"{instances - len(failures)}/{instances} passed"
        if failures:
            detail += f"; first failure: {failures[0].detail}"
        results.append(CheckResult(f"grad:{name}", not failures, detail))
    return results


def random_conv_config(rng: np.random.Generator) -> Dict[str, int]:
    while True:
        cfg = {
            "n": int(rng.integers(1, 3)),
            "ci": int(rng.integers(1, 4)),
            "co": int(rng.integers(1, 5)),
            "h": int(rng.integers(3, 9)),
            "w": int(rng.integers(3, 9)),
            "k": int(rng.integers(1, 4)),
            "stride": int(rng.integers(1, 3)),
            "pad": int(rng.integers(0, 2)),
        }
        if F.conv_output_size(cfg["h"], cfg["k"], cfg["stride"], cfg["pad"]) >= 1 and F.conv_output_size(
            cfg["w"], cfg["k"], cfg["stride"], cfg["pad"]
        ) >= 1:
            return cfg


def conv_oracle_checks(configs: int = 100, seed: int = 0) -> CheckResult:
    """Integer-valued float64 data keeps every product and sum exact, so equality is exact."""
    rng = np.random.default_rng(seed)
    for i in range(configs):
        c = random_conv_config(rng)
        x = rng.integers(-3, 4, (c["n"], c["ci"], c["h"], c["w"])).astype(CHECK_DTYPE)
        w = rng.integers(-2, 3, (c["co"], c["ci"], c["k"], c["k"])).astype(CHECK_DTYPE)
        fast, _ = F.conv2d_forward(x, w, c["stride"], c["pad"])
        slow = F.conv2d_naive(x, w, c["stride"], c["pad"])
        if fast.shape != slow.shape or not np.array_equal(fast, slow):
            return CheckResult("conv_oracle", False, f"config {i} differs: {c}")
    return CheckResult("conv_oracle", True, f"{configs} configurations identical")


def fixture_checks() -> List[CheckResult]:
    results = []
    y = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    smoothed = smooth_labels(y, 0.1)
    ok = bool(np.allclose(smoothed, [0.92, 0.02, 0.02, 0.02, 0.02], rtol=0, atol=1e-15))
    results.append(CheckResult("fixture:smooth_labels", ok, f"{smoothed.tolist()}"))

    loss, _ = cross_entropy_smoothed(np.zeros((3, 5)), np.array([0, 2, 4]), 0.1)
    results.append(CheckResult("fixture:uniform_loss", abs(loss - math.log(5)) < 1e-9, f"loss {loss!r}"))

    rows = softmax(np.random.default_rng(0).standard_normal((16, 5)) * 10).sum(axis=1)
    results.append(CheckResult("fixture:softmax_rows", bool(np.all(np.abs(rows - 1) < 1e-6)), ""))

    cfg = TrainConfig()
    want = {0: 0.1, 99: 0.1, 100: 0.01, 199: 0.01, 200: 0.001, 299: 0.001}
    ok = all(lr_at(e, cfg) == v for e, v in want.items())
    results.append(CheckResult("fixture:lr_schedule", ok, str({e: lr_at(e, cfg) for e in want})))
    return results


def run_selftest(instances: int = 20, oracle_configs: int = 100, seed: int = 0) -> List[CheckResult]:
    results = gradient_checks(instances, seed)
    results.append(conv_oracle_checks(oracle_configs, seed))
    results.extend(fixture_checks())
    for r in results:
        if r.passed:
            logger.info("PASS %s %s", r.name, r.detail)
        else:
            logger.error("FAIL %s %s", r.name, r.detail)
    return results
