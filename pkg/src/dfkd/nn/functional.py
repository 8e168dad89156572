"""Differentiable layer kernels on top of :mod:`dfkd.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..autodiff import Tensor, as_tensor, make_result, matmul, reduce, transpose
from ..autodiff import exp, log
from ..errors import ConfigError, DataError, ShapeError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """[N,C,H,W] -> ([N, C*k*k, Ho*Wo], Ho, Wo), rows ordered (channel, ky, kx)."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation of ``x`` [N,Cin,H,W] with square kernels ``weight`` [Cout,Cin,k,k]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, k, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if k != kw:
        raise ShapeError(f"conv2d: only square kernels are supported, got {k}x{kw}")
    if conv_output_size(h, k, stride, padding) < 1 or conv_output_size(w, k, stride, padding) < 1:
        raise ConfigError(f"conv2d: kernel {k}x{k} does not fit a {h}x{w} input")

    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, cout, 1, 1)

    def bw(g):
        g3 = g.reshape(n, cout, ho * wo)
        dw = None
        if weight.requires_grad:
            dw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g3).reshape(n, cin, k, k, ho, wo)
            dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def linear(x, weight, bias=None) -> Tensor:
    """x [N,in] times weight [out,in] transposed, plus bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, transpose(weight, (1, 0)))
    return out if bias is None else out + bias


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(np.maximum(x.data, 0), (x,), lambda g: (g * pos,), "relu")


def maxpool2d(x, kernel: int, stride: int | None = None) -> Tensor:
    """Max over kernel x kernel windows; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    stride = stride or kernel
    n, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise ShapeError(f"maxpool2d: {kernel}x{kernel} window does not fit {h}x{w}")
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dx = np.zeros_like(x.data)
        for i in range(kernel):
            for j in range(kernel):
                hit = arg == i * kernel + j
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (dx,)

    return make_result(out, (x,), bw, "maxpool2d")


def global_avg_pool(x) -> Tensor:
    return reduce("mean", x, (2, 3))


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


@dataclass
class BNBatchStats:
    """Per-channel mean and biased variance of the batch entering a BatchNorm layer."""

    mean: Tensor
    var: Tensor


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Returns (output, BNBatchStats).

    Training mode normalises with the batch statistics and folds them into the
    running buffers in place.  Eval mode normalises with the running buffers and
    leaves them untouched; the batch statistics are still computed, as
    differentiable functions of ``x``.
    """
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != running_mean.shape[0]:
        raise ShapeError(f"batchnorm2d: input {x.shape} does not match {running_mean.shape[0]} channels")
    c = x.shape[1]
    bshape = (1, c, 1, 1)
    mean = reduce("mean", x, (0, 2, 3))
    var = reduce("var_biased", x, (0, 2, 3))
    stats = BNBatchStats(mean, var)
    if training:
        xhat = (x - mean.reshape(bshape)) / (var.reshape(bshape) + eps) ** 0.5
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.data
        running_var *= 1.0 - momentum
        running_var += momentum * var.data
        out = xhat * as_tensor(gamma).reshape(bshape) + as_tensor(beta).reshape(bshape)
        return out, stats
    return _bn_eval(x, as_tensor(gamma), as_tensor(beta), running_mean, running_var, eps), stats


def _bn_eval(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var, eps) -> Tensor:
    # fused gamma * (x - mu_run) / sqrt(var_run + eps) + beta
    c = x.shape[1]
    inv = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(x.dtype).reshape(1, c, 1, 1)
    xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        dx = g * (gamma.data.reshape(1, c, 1, 1) * inv) if x.requires_grad else None
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), bw, "batchnorm_eval")


def softmax(logits, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of logits / temperature, stabilised by the row max."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = as_tensor(logits)
    if temperature != 1.0:
        z = z / temperature
    e = exp(z - reduce("max", z, 1, keepdims=True))
    return e / reduce("sum", e, 1, keepdims=True)


def log_softmax(logits, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = as_tensor(logits)
    if temperature != 1.0:
        z = z / temperature
    shifted = z - reduce("max", z, 1, keepdims=True)
    return shifted - log(reduce("sum", exp(shifted), 1, keepdims=True))


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise DataError(f"label {int(bad)} outside [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=np.float32)
    out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
    return out


def cross_entropy_with_labels(logits, labels) -> Tensor:
    """Batch mean of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    target = one_hot(labels, logits.shape[1])
    return -reduce("mean", reduce("sum", log_softmax(logits) * target, 1))
