"""
Four-channel residual classifier: stem -> 4 stages of basic blocks -> global average
pool -> linear to K logits.
"""
import logging
from typing import Any, Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config import N_BANDS, N_CLASSES
from errors import ConfigError, ShapeMismatch
from services.nn.layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBlock,
    Sequential,
)
from services.nn.tensor import DTYPE

logger = logging.getLogger(__name__)

PRESETS: Dict[str, List[int]] = {
    "r34": [3, 4, 6, 3],
    "compact": [1, 1, 1, 1],
}
DEFAULT_STAGE_WIDTHS = [64, 128, 256, 512]

Shape = Tuple[int, ...]


class ModelConfig(BaseModel):
    """Architecture descriptor; stored verbatim in checkpoints."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    stem: Literal["cifar", "imagenet"] = "cifar"
    stage_blocks: List[int] = PRESETS["compact"]
    stage_widths: List[int] = DEFAULT_STAGE_WIDTHS
    in_channels: Literal[4] = N_BANDS
    n_classes: Literal[5] = N_CLASSES

    @field_validator("stage_blocks", "stage_widths")
    @classmethod
    def _four_positive(cls, v: List[int]) -> List[int]:
        if len(v) != 4 or any(int(n) < 1 for n in v):
            raise ValueError(f"expected 4 integers >= 1, got {v}")
        return [int(n) for n in v]

    @classmethod
    def from_preset(cls, name: str, **overrides: Any) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"Unknown model preset {name!r}; choose from {sorted(PRESETS)}")
        fields = {"stage_blocks": list(PRESETS[name])}
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    def descriptor(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _stem_kernel(cfg: ModelConfig) -> Tuple[int, int, int]:
    """(kernel, stride, pad) of the stem convolution."""
    return (3, 1, 1) if cfg.stem == "cifar" else (7, 2, 3)


def block_plan(cfg: ModelConfig) -> List[Tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, stride) for every residual block, in order."""
    plan = []
    in_c = cfg.stage_widths[0]
    for s, (n_blocks, width) in enumerate(zip(cfg.stage_blocks, cfg.stage_widths)):
        for b in range(n_blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            plan.append((f"layer{s + 1}.{b}", in_c, width, stride))
            in_c = width
    return plan


def expected_parameter_shapes(cfg: ModelConfig) -> List[Tuple[str, Shape]]:
    """Parameter names and shapes in checkpoint order, from the descriptor alone."""
    k, _, _ = _stem_kernel(cfg)
    w0 = cfg.stage_widths[0]
    shapes: List[Tuple[str, Shape]] = [
        ("stem.conv.weight", (w0, cfg.in_channels, k, k)),
        ("stem.bn.weight", (w0,)),
        ("stem.bn.bias", (w0,)),
    ]
    for name, in_c, out_c, stride in block_plan(cfg):
        shapes += [
            (f"{name}.conv1.weight", (out_c, in_c, 3, 3)),
            (f"{name}.bn1.weight", (out_c,)),
            (f"{name}.bn1.bias", (out_c,)),
            (f"{name}.conv2.weight", (out_c, out_c, 3, 3)),
            (f"{name}.bn2.weight", (out_c,)),
            (f"{name}.bn2.bias", (out_c,)),
        ]
        if stride != 1 or in_c != out_c:
            shapes += [
                (f"{name}.shortcut.conv.weight", (out_c, in_c, 1, 1)),
                (f"{name}.shortcut.bn.weight", (out_c,)),
                (f"{name}.shortcut.bn.bias", (out_c,)),
            ]
    shapes += [
        ("fc.weight", (cfg.n_classes, cfg.stage_widths[-1])),
        ("fc.bias", (cfg.n_classes,)),
    ]
    return shapes


def expected_buffer_shapes(cfg: ModelConfig) -> List[Tuple[str, Shape]]:
    """BN running statistics, one mean/var pair per BN parameter pair."""
    out: List[Tuple[str, Shape]] = []
    for name, shape in expected_parameter_shapes(cfg):
        if ".bn" in name and name.endswith(".weight"):
            base = name[: -len(".weight")]
            out += [(f"{base}.running_mean", shape), (f"{base}.running_var", shape)]
    return out


class ResNetClassifier(Layer):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=DTYPE) -> None:
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        k, stride, pad = _stem_kernel(cfg)
        w0 = cfg.stage_widths[0]
        stem: List[Tuple[str, Layer]] = [
            ("conv", Conv2d(cfg.in_channels, w0, k, stride, pad, rng, dtype)),
            ("bn", BatchNorm2d(w0, dtype)),
            ("relu", ReLU()),
        ]
        if cfg.stem == "imagenet":
            stem.append(("pool", MaxPool2d(3, 2, 1)))
        self.stem = Sequential(*stem)

        self.stages: List[Tuple[str, Sequential]] = []
        blocks_by_stage: Dict[str, List[Tuple[str, Layer]]] = {}
        for name, in_c, out_c, block_stride in block_plan(cfg):
            stage, idx = name.split(".")
            blocks_by_stage.setdefault(stage, []).append((idx, ResidualBlock(in_c, out_c, block_stride, rng, dtype)))
        for stage, blocks in blocks_by_stage.items():
            self.stages.append((stage, Sequential(*blocks)))

        self.pool = GlobalAvgPool()
        self.fc = Linear(cfg.stage_widths[-1], cfg.n_classes, rng, dtype)

    def children(self) -> List[Tuple[str, Layer]]:
        return [("stem", self.stem), *self.stages, ("fc", self.fc)]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"model expects (N, {self.cfg.in_channels}, H, W) input, got {x.shape}")
        out = self.stem.forward(np.ascontiguousarray(x, dtype=self.dtype), training)
        for _, stage in self.stages:
            out = stage.forward(out, training)
        return self.fc.forward(self.pool.forward(out, training), training)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        dout = self.pool.backward(self.fc.backward(dlogits))
        for _, stage in reversed(self.stages):
            dout = stage.backward(dout)
        return self.stem.backward(dout)

    def batchnorms(self) -> List[Tuple[str, BatchNorm2d]]:
        return [(name, m) for name, m in self.named_modules() if isinstance(m, BatchNorm2d)]

    def param_count(self) -> int:
        return int(sum(p.size for _, p in self.named_parameters()))

    def state(self) -> Dict[str, Any]:
        """Copies of parameters, buffers and BN step counters."""
        return {
            "params": {n: p.copy() for n, p in self.named_parameters()},
            "buffers": {n: b.copy() for n, b in self.named_buffers()},
            "bn_tracked": {n: m.num_batches_tracked for n, m in self.batchnorms()},
        }

    def load_state(self, state: Dict[str, Any]) -> None:
        for name, target in list(self.named_parameters()) + list(self.named_buffers()):
            source = state["params"].get(name, state["buffers"].get(name))
            if source is None or source.shape != target.shape:
                raise ShapeMismatch(f"state entry {name} missing or misshapen")
            target[...] = source
        for name, bn in self.batchnorms():
            bn.num_batches_tracked = int(state.get("bn_tracked", {}).get(name, bn.num_batches_tracked))


def model_forward(batch: np.ndarray, model: ResNetClassifier, training: bool = False) -> np.ndarray:
    """(N, 4, H, W) -> (N, K) logits."""
    return model.forward(batch, training)


def analytic_param_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(shape)) for _, shape in expected_parameter_shapes(cfg)))
