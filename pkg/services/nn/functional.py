"""
Forward/backward kernels for the fixed layer set. Each forward returns (out, cache);
each backward takes (dout, cache).

Convolutions and the linear layer run one matrix product per sample, so a sample's
result does not depend on what else is in the batch.
"""
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import EvalBeforeStats, ShapeMismatch

Cache = Dict[str, Any]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> Tuple[np.ndarray, int, int]:
    """(N, Ho*Wo, C*kh*kw) patches, column order (c, i, j) to match weight.reshape(Co, -1)."""
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> Tuple[np.ndarray, Cache]:
    """Cross-correlation with zero padding, no bias. x: (N, Ci, H, W), w: (Co, Ci, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if c != ci:
        raise ShapeMismatch(f"conv2d input has {c} channels, weight expects {ci}")
    if conv_output_size(h, kh, stride, pad) < 1 or conv_output_size(wd, kw, stride, pad) < 1:
        raise ShapeMismatch(f"conv2d kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}")
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    wmat = w.reshape(co, -1)
    out = np.matmul(cols, wmat.T)  # (N, Ho*Wo, Co)
    out = np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    cache = {"cols": cols, "w": w, "x_shape": x.shape, "stride": stride, "pad": pad, "hw_out": (ho, wo)}
    return out, cache


def conv2d_backward(dout: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients (dx, dw)."""
    cols, w = cache["cols"], cache["w"]
    n, c, h, wd = cache["x_shape"]
    stride, pad = cache["stride"], cache["pad"]
    ho, wo = cache["hw_out"]
    co, _, kh, kw = w.shape

    dout_m = dout.transpose(0, 2, 3, 1).reshape(n, ho * wo, co)
    dw = np.tensordot(dout_m, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    dcols = np.matmul(dout_m, w.reshape(co, -1)).reshape(n, ho, wo, c, kh, kw)

    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    batches_tracked: int = 1,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tuple[np.ndarray, Cache]:
    """
    Per-channel batch norm over (N, H, W). Train mode normalizes by batch statistics and
    updates running_mean / running_var in place (unbiased variance); eval mode uses them.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch(f"batchnorm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    shape = (1, -1, 1, 1)
    if training:
        axes = (0, 2, 3)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        if batches_tracked <= 0:
            raise EvalBeforeStats("batchnorm in eval mode before running statistics were updated")
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "training": training}
    return out.astype(x.dtype, copy=False), cache


def batchnorm_backward(dout: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not cache["training"]:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    return np.maximum(x, 0), {"mask": x > 0}


def relu_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    return dout * cache["mask"]


def maxpool_forward(x: np.ndarray, k: int = 3, stride: int = 2, pad: int = 1) -> Tuple[np.ndarray, Cache]:
    """Max pooling with -inf padding; ties go to the first window position."""
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., np.newaxis], axis=-1)[..., 0]
    return np.ascontiguousarray(out), {"arg": arg, "x_shape": x.shape, "k": k, "stride": stride, "pad": pad}


def maxpool_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    n, c, h, w = cache["x_shape"]
    k, stride, pad = cache["k"], cache["stride"], cache["pad"]
    arg = cache["arg"]
    ho, wo = arg.shape[2], arg.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dout * hit
    return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w])


def global_avg_pool_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    return x.mean(axis=(2, 3)), {"x_shape": x.shape}


def global_avg_pool_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    n, c, h, w = cache["x_shape"]
    scale = np.asarray(1.0 / (h * w), dtype=dout.dtype)
    return np.broadcast_to((dout * scale)[:, :, np.newaxis, np.newaxis], (n, c, h, w)).copy()


def linear_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]) -> Tuple[np.ndarray, Cache]:
    """x: (N, F), w: (K, F). Row-by-row products keep each sample batch-independent."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {w.shape}")
    out = np.matmul(x[:, np.newaxis, :], w.T)[:, 0, :]
    if b is not None:
        out = out + b
    return out, {"x": x, "w": w}


def linear_backward(dout: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db)."""
    x, w = cache["x"], cache["w"]
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct six-loop convolution; the oracle the optimized kernel is checked against."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, ho, wo), dtype=x.dtype)
    for b in range(n):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[b, ch, r * stride + i, s * stride + j] * w[o, ch, i, j]
                    out[b, o, r, s] = acc
    return out
