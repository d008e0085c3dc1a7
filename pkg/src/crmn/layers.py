"""Convolution, batch normalization, pooling, and dense layers.

All spatial tensors are laid out b*maps*rows*cols. Convolutions are
cross-correlations (no kernel flip) with implicit zero padding of
(k - 1) // 2 on each border, so stride-1 output extent equals the input
extent and stride-2 halves it (ceiling division). Convolutions carry no
bias term; every convolution in the network is followed by a batch norm
whose shift plays that role.

The forward convolution is an im2col matmul (window view via as_strided,
one BLAS call), which keeps finite-difference sweeps over whole models
affordable. The backward pass scatters through an explicit k*k slice loop,
which is plenty for the gradient sizes used here.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ContractError, DimensionError
from .tensor import Tensor, _bump, _record, _tensor, add, matmul


def he_conv_weight(rng, out_maps, in_maps, k, dtype=np.float32):
    """Gaussian kernel scaled by sqrt(2 / (k*k*out_maps))."""
    std = np.sqrt(2.0 / (k * k * out_maps))
    w = rng.standard_normal((out_maps, in_maps, k, k)) * std
    return Tensor(w.astype(dtype), requires_grad=True)


def he_dense_weight(rng, fan_in, fan_out, dtype=np.float32):
    """Gaussian matrix scaled by sqrt(2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    w = rng.standard_normal((fan_in, fan_out)) * std
    return Tensor(w.astype(dtype), requires_grad=True)


def conv2d(x, weight, stride=1):
    """Cross-correlate ``x`` (b*ci*H*W) with ``weight`` (co*ci*k*k)."""
    x, weight = _tensor(x), _tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d: expected rank-4 input and weight, got {x.shape} and {weight.shape}")
    b, ci, h, w = x.shape
    co, wci, k, k2 = weight.shape
    if wci != ci or k != k2:
        raise DimensionError(f"conv2d: weight {weight.shape} does not fit input {x.shape}")
    pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {k} too large for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = xp.strides
    windows = as_strided(
        xp,
        shape=(b, ci, ho, wo, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, ci * k * k)
    flat = cols @ weight.data.reshape(co, ci * k * k).T
    out_data = flat.reshape(b, ho, wo, co).transpose(0, 3, 1, 2)
    out = Tensor(np.ascontiguousarray(out_data),
                 requires_grad=x.requires_grad or weight.requires_grad)
    n = b * co * ho * wo * ci * k * k
    _bump(mults=n, adds=n)

    def backward_fn(g, accum):
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(k):
                for j in range(k):
                    patch = xp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride]
                    gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, patch)
            accum(weight, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    spread = np.einsum("bohw,oc->bchw", g, weight.data[:, :, i, j])
                    gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += spread
            if pad:
                accum(x, gxp[:, :, pad:pad + h, pad:pad + w])
            else:
                accum(x, gxp)

    _record(out, backward_fn)
    return out


class Conv2d:
    """A bias-free convolution with a fixed stride."""

    def __init__(self, weight, stride=1):
        self.weight = weight
        self.stride = stride

    def forward(self, x):
        return conv2d(x, self.weight, self.stride)

    def params(self):
        return [("weight", self.weight)]


def batch_norm(x, scale, shift, running_mean, running_var,
               training, momentum=0.1, eps=1e-5):
    """Normalize each map over the batch and spatial axes, then rescale.

    Training mode uses batch statistics (biased variance) and folds them
    into the running estimates in place. Eval mode applies the running
    estimates as a fixed per-map affine. Counted cost is two operations
    per element in either mode, since the normalization constants fold
    into a single scale-and-shift.
    """
    x, scale, shift = _tensor(x), _tensor(scale), _tensor(shift)
    if x.ndim != 4:
        raise DimensionError(f"batch_norm: expected rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    if scale.shape != (c,) or shift.shape != (c,):
        raise DimensionError(
            f"batch_norm: scale/shift {scale.shape}/{shift.shape} for {c} maps")

    if training:
        if b < 2:
            raise ContractError(f"batch_norm: training mode needs batch >= 2, got {b}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
    out_data = scale.data[:, None, None] * xhat + shift.data[:, None, None]
    out = Tensor(out_data, requires_grad=x.requires_grad or scale.requires_grad
                 or shift.requires_grad)
    _bump(mults=out.size, adds=out.size)
    m = b * h * w

    def backward_fn(g, accum):
        accum(scale, np.einsum("bchw,bchw->c", g, xhat))
        accum(shift, g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        g_xhat = g * scale.data[:, None, None]
        if training:
            sum_g = g_xhat.sum(axis=(0, 2, 3))
            sum_gx = np.einsum("bchw,bchw->c", g_xhat, xhat)
            gx = (g_xhat - (sum_g[:, None, None] + xhat * sum_gx[:, None, None]) / m)
            gx *= inv_std[:, None, None]
            accum(x, gx)
        else:
            accum(x, g_xhat * inv_std[:, None, None])

    _record(out, backward_fn)
    return out


class BatchNorm:
    """Per-map batch normalization with learned scale and shift."""

    def __init__(self, maps, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.scale = Tensor(np.ones(maps, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(maps, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(maps, dtype=np.float64)
        self.running_var = np.ones(maps, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, training):
        return batch_norm(x, self.scale, self.shift, self.running_mean,
                          self.running_var, training, self.momentum, self.eps)

    def params(self):
        return [("scale", self.scale), ("shift", self.shift)]


def meanpool2x2(x):
    """Average non-overlapping 2x2 spatial windows; extents must be even."""
    x = _tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"meanpool2x2: expected rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"meanpool2x2: extents must be even, got {h}x{w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2)
    out = Tensor(blocks.mean(axis=(3, 5)), requires_grad=x.requires_grad)
    _bump(mults=out.size, adds=4 * out.size)

    def backward_fn(g, accum):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.asarray(0.25, dtype=g.dtype)
        accum(x, gx)

    _record(out, backward_fn)
    return out


def global_avg_pool(x):
    """Average each map over all spatial positions: b*c*H*W -> b*c."""
    x = _tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)), requires_grad=x.requires_grad)
    _bump(mults=b * c, adds=b * c * h * w)
    scale = 1.0 / (h * w)

    def backward_fn(g, accum):
        gx = np.broadcast_to((g * scale)[:, :, None, None], (b, c, h, w))
        accum(x, gx)

    _record(out, backward_fn)
    return out


class Dense:
    """Fully connected layer: y = x W + b."""

    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    def forward(self, x):
        return add(matmul(x, self.weight), self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]
