"""
Stateful layers wrapping the functional kernels.

Layers keep a backward cache only for training-mode forwards, so eval-mode forwards do
not mutate the layer and may run concurrently on one shared model.
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import ShapeMismatch
from services.nn import functional as F
from services.nn.tensor import DTYPE


class Layer:
    """Base layer: named parameters, matching gradients and running buffers."""

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache: Optional[dict] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> List[Tuple[str, "Layer"]]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self.params.items():
            yield prefix + name, value
        for child_name, child in self.children():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_gradients(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self.params.items():
            yield prefix + name, self.grads.get(name, np.zeros_like(value))
        for child_name, child in self.children():
            yield from child.named_gradients(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self.buffers.items():
            yield prefix + name, value
        for child_name, child in self.children():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Layer"]]:
        yield prefix.rstrip("."), self
        for child_name, child in self.children():
            yield from child.named_modules(f"{prefix}{child_name}.")

    def _need_cache(self) -> dict:
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a training-mode forward")
        return self._cache


class Conv2d(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        pad: int = 0,
        rng: Optional[np.random.Generator] = None,
        dtype=DTYPE,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        # He-normal, fan-out mode
        std = np.sqrt(2.0 / (out_channels * kernel_size * kernel_size))
        w = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size)) * std
        self.params["weight"] = w.astype(dtype)
        self.stride = stride
        self.pad = pad

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.conv2d_forward(x, self.params["weight"], self.stride, self.pad)
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw = F.conv2d_backward(dout, self._need_cache())
        self.grads["weight"] = dw
        return dx


class BatchNorm2d(Layer):
    def __init__(self, channels: int, dtype=DTYPE) -> None:
        super().__init__()
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.num_batches_tracked = 0

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.batchnorm_forward(
            x,
            self.params["weight"],
            self.params["bias"],
            self.buffers["running_mean"],
            self.buffers["running_var"],
            training,
            batches_tracked=self.num_batches_tracked,
        )
        if training:
            self.num_batches_tracked += 1
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = F.batchnorm_backward(dout, self._need_cache())
        self.grads["weight"] = dgamma
        self.grads["bias"] = dbeta
        return dx


class ReLU(Layer):
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.relu_forward(x)
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return F.relu_backward(dout, self._need_cache())


class MaxPool2d(Layer):
    def __init__(self, kernel_size: int = 3, stride: int = 2, pad: int = 1) -> None:
        super().__init__()
        self.kernel_size, self.stride, self.pad = kernel_size, stride, pad

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.maxpool_forward(x, self.kernel_size, self.stride, self.pad)
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return F.maxpool_backward(dout, self._need_cache())


class GlobalAvgPool(Layer):
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.global_avg_pool_forward(x)
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return F.global_avg_pool_backward(dout, self._need_cache())


class Linear(Layer):
    def __init__(
        self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None, dtype=DTYPE
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.params["weight"] = rng.uniform(-bound, bound, (out_features, in_features)).astype(dtype)
        self.params["bias"] = rng.uniform(-bound, bound, out_features).astype(dtype)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = F.linear_forward(x, self.params["weight"], self.params["bias"])
        self._cache = cache if training else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = F.linear_backward(dout, self._need_cache())
        self.grads["weight"] = dw
        self.grads["bias"] = db
        return dx


class Sequential(Layer):
    def __init__(self, *named: Tuple[str, Layer]) -> None:
        super().__init__()
        self.layers: List[Tuple[str, Layer]] = list(named)

    def children(self) -> List[Tuple[str, Layer]]:
        return self.layers

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for _, layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class ResidualBlock(Layer):
    """
    Basic block: conv3x3-BN-ReLU-conv3x3-BN, plus the skip path, then ReLU.
    The skip is the identity when shapes match, else a 1x1 strided conv + BN projection.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
        dtype=DTYPE,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, rng, dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, rng, dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype)
        self.shortcut: Optional[Sequential] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Sequential(
                ("conv", Conv2d(in_channels, out_channels, 1, stride, 0, rng, dtype)),
                ("bn", BatchNorm2d(out_channels, dtype)),
            )
        self.relu_out = ReLU()

    def children(self) -> List[Tuple[str, Layer]]:
        named: List[Tuple[str, Layer]] = [
            ("conv1", self.conv1),
            ("bn1", self.bn1),
            ("conv2", self.conv2),
            ("bn2", self.bn2),
        ]
        if self.shortcut is not None:
            named.append(("shortcut", self.shortcut))
        return named

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"residual block expects {self.in_channels} channels, got input {x.shape}")
        out = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, training), training), training)
        out = self.bn2.forward(self.conv2.forward(out, training), training)
        skip = x if self.shortcut is None else self.shortcut.forward(x, training)
        return self.relu_out.forward(out + skip, training)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dsum = self.relu_out.backward(dout)
        dres = self.conv1.backward(self.bn1.backward(self.relu1.backward(self.conv2.backward(self.bn2.backward(dsum)))))
        dskip = dsum if self.shortcut is None else self.shortcut.backward(dsum)
        return dres + dskip


def residual_block_forward(x: np.ndarray, block: ResidualBlock, training: bool = False) -> np.ndarray:
    return block.forward(x, training)
