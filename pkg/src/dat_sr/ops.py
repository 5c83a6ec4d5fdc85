"""Neural building blocks shared by the attention, interaction, and model layers.

All functions take parameter dataclasses holding :class:`~dat_sr.tensor.Tensor`
weights and record gradients through the tensor graph.  Conventions fixed here:

* convolution is cross-correlation (no kernel flip) with zero padding and
  stride 1; odd kernels only, so outputs keep their spatial extents;
* layer normalization acts along the channel axis of NCHW maps, variance uses
  the 1/C divisor and epsilon sits inside the square root;
* GELU is the exact Gaussian-CDF form, x * Phi(x), not the tanh approximation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import ConfigError, ShapeError, Tensor, _result, tensor_mean


@dataclass
class LinearParams:
    """Per-position linear map: weight [C_out, C_in], optional bias [C_out]."""

    weight: Tensor
    bias: Tensor | None = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ConfigError(f"linear weight must be rank 2, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ConfigError("linear bias length must equal C_out")


@dataclass
class Conv2dParams:
    """Same-padded stride-1 convolution: weight [C_out, C_in/groups, kH, kW]."""

    weight: Tensor
    bias: Tensor | None = None
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ConfigError(f"conv weight must be rank 4, got {self.weight.shape}")
        c_out, _, kh, kw = self.weight.shape
        if self.groups < 1 or c_out % self.groups != 0:
            raise ConfigError(f"C_out={c_out} not divisible by groups={self.groups}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise ConfigError("conv bias length must equal C_out")


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ConfigError("layernorm gamma/beta must be equal-length vectors")
        if self.epsilon <= 0:
            raise ConfigError("layernorm epsilon must be positive")


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """x[..., C_in] -> x @ weight^T + bias, independently per leading index."""
    c_out, c_in = p.weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"linear expects trailing extent {c_in}, got {x.shape}")
    lead = x.shape[:-1]
    flat = x.reshape((int(np.prod(lead)) if lead else 1, c_in))
    out = flat @ p.weight.permute((1, 0))
    if p.bias is not None:
        out = out + p.bias.reshape((1, c_out))
    return out.reshape(lead + (c_out,))


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Grouped same-padded cross-correlation on NCHW input."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    c_out, c_in_g, kh, kw = p.weight.shape
    groups = p.groups
    if c % groups != 0 or c_in_g != c // groups:
        raise ConfigError(
            f"conv2d channel mismatch: input C={c}, weight expects {c_in_g}*groups={groups}"
        )
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    cig = c // groups
    cog = c_out // groups
    weight, bias = p.weight, p.bias

    # im2col and one batched GEMM per call: [G, cog, cig*kh*kw] @ [G, cig*kh*kw, N*H*W]
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # [N,C,H,W,kh,kw]
    cols = np.ascontiguousarray(windows.transpose(1, 4, 5, 0, 2, 3))
    cols = cols.reshape(groups, cig * kh * kw, n * h * w)
    w_mat = weight.data.reshape(groups, cog, cig * kh * kw)
    out = np.matmul(w_mat, cols).reshape(c_out, n, h, w).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1).astype(out.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        g_mat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(groups, cog, n * h * w)
        if weight.requires_grad:
            gw = np.matmul(g_mat, cols.swapaxes(1, 2))
            weight._accumulate(gw.reshape(weight.shape).astype(weight.dtype, copy=False))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)).astype(bias.dtype, copy=False))
        if x.requires_grad:
            gcols = np.matmul(w_mat.swapaxes(1, 2), g_mat)  # [G, cig*kh*kw, N*H*W]
            gcols = gcols.reshape(c, kh, kw, n, h, w).transpose(3, 0, 1, 2, 4, 5)
            gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + w] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
            x._accumulate(np.ascontiguousarray(gx).astype(x.dtype, copy=False))

    return _result(out.astype(x.dtype, copy=False), (x, weight) + (() if bias is None else (bias,)), backward)


def layernorm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Normalize each pixel's channel vector to zero mean / unit variance, then affine."""
    if x.ndim != 4:
        raise ShapeError(f"layernorm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if p.gamma.shape[0] != c:
        raise ShapeError(f"layernorm expects C={p.gamma.shape[0]}, got C={c}")
    gamma, beta, eps = p.gamma, p.beta, p.epsilon

    # Statistics in float64: keeps huge-but-finite float32 inputs from overflowing.
    xd = x.data.astype(np.float64, copy=False)
    mean = xd.mean(axis=1, keepdims=True)
    centered = xd - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = gamma.data.reshape(1, c, 1, 1) * x_hat + beta.data.reshape(1, c, 1, 1)

    def backward(g: np.ndarray) -> None:
        gd = g.astype(np.float64, copy=False)
        if gamma.requires_grad:
            gamma._accumulate((gd * x_hat).sum(axis=(0, 2, 3)).astype(gamma.dtype, copy=False))
        if beta.requires_grad:
            beta._accumulate(gd.sum(axis=(0, 2, 3)).astype(beta.dtype, copy=False))
        if x.requires_grad:
            g_hat = gd * gamma.data.reshape(1, c, 1, 1).astype(np.float64, copy=False)
            m1 = g_hat.mean(axis=1, keepdims=True)
            m2 = (g_hat * x_hat).mean(axis=1, keepdims=True)
            gx = inv_std * (g_hat - m1 - x_hat * m2)
            x._accumulate(gx.astype(x.dtype, copy=False))

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted exponentiation normalized along ``axis``; slices sum to one."""
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate((y * (g - dot)).astype(x.dtype, copy=False))

    return _result(y.astype(x.dtype, copy=False), (x,), backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g: np.ndarray) -> None:
        pdf = np.exp(-0.5 * x.data.astype(np.float64) ** 2) * _INV_SQRT2PI
        x._accumulate((g * (cdf + x.data * pdf)).astype(x.dtype, copy=False))

    return _result(out.astype(x.dtype, copy=False), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def backward(g: np.ndarray) -> None:
        x._accumulate((g * s * (1.0 - s)).astype(x.dtype, copy=False))

    return _result(s.astype(x.dtype, copy=False), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping singleton spatial axes: [N,C,H,W] -> [N,C,1,1]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    return tensor_mean(x, axis=(2, 3), keepdims=True)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange r*r channel blocks into an r-times spatial upscale."""
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r) != 0:
        raise ShapeError(f"channel extent {c} not divisible by r^2={r * r}")
    if r == 1:
        return x.reshape(x.shape)
    c_out = c // (r * r)
    t = x.reshape((n, c_out, r, r, h, w))
    t = t.permute((0, 1, 4, 2, 5, 3))  # [N, C_out, H, r, W, r]
    return t.reshape((n, c_out, h * r, w * r))


def _reflect_indices(extent: int, pad: int) -> np.ndarray:
    """Bottom/right reflection indices (edge not repeated), cycling if pad >= extent."""
    idx = list(range(extent))
    position, step = extent - 1, -1
    for _ in range(pad):
        if extent == 1:
            idx.append(0)
            continue
        position += step
        if position == -1 or position == extent:
            step = -step
            position += 2 * step
        idx.append(position)
    return np.asarray(idx, dtype=np.intp)


def pad_reflect(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the bottom/right spatial borders of an NCHW map."""
    if x.ndim != 4:
        raise ShapeError(f"pad_reflect expects NCHW input, got {x.shape}")
    if pad_h == 0 and pad_w == 0:
        return x
    _, _, h, w = x.shape
    idx_h = _reflect_indices(h, pad_h)
    idx_w = _reflect_indices(w, pad_w)
    out = np.ascontiguousarray(x.data[:, :, idx_h][:, :, :, idx_w])

    def backward(g: np.ndarray) -> None:
        n, c = g.shape[:2]
        partial = np.zeros((n, c, h + pad_h, w), dtype=g.dtype)
        np.add.at(partial, (slice(None), slice(None), slice(None), idx_w), g)
        full = np.zeros((n, c, h, w), dtype=g.dtype)
        np.add.at(full, (slice(None), slice(None), idx_h), partial)
        x._accumulate(full)

    return _result(out, (x,), backward)


def crop_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width region of an NCHW map."""
    if x.ndim != 4:
        raise ShapeError(f"crop_spatial expects NCHW input, got {x.shape}")
    _, _, h, w = x.shape
    if not (1 <= height <= h and 1 <= width <= w):
        raise ShapeError(f"crop {height}x{width} exceeds extents {h}x{w}")
    if height == h and width == w:
        return x

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = g
        x._accumulate(full)

    return _result(np.ascontiguousarray(x.data[:, :, :height, :width]), (x,), backward)
