"""Adaptive interaction between the attention branch and a depth-wise conv branch.

Two squeeze-style gates are computed from branch outputs: a one-channel spatial
map (1x1 conv bottleneck, GELU, 1x1 conv, sigmoid) and a per-channel map (the
same stack after global average pooling).  Each branch is then re-weighted by
the other branch's map and the sum goes through the shared output projection:

* spatial attention:  wp( Ys * c_map(Yw) + Yw * s_map(Ys) )
* channel attention:  wp( Yc * s_map(Yw) + Yw * c_map(Yc) )

When the interaction parameters are absent the two branches are simply added
before the projection (the plain parallel-conv baseline).
"""
from __future__ import annotations

from dataclasses import dataclass

from .attention import CwsaParams, SwsaParams, cw_sa, shifted_sw_sa
from .ops import Conv2dParams, LinearParams, conv2d, gelu, global_avg_pool, linear, sigmoid
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class AimParams:
    """1x1-conv stacks for the spatial map (w1, w2) and channel map (w3, w4)."""

    w1: Conv2dParams
    w2: Conv2dParams
    w3: Conv2dParams
    w4: Conv2dParams

    def __post_init__(self):
        if self.w2.weight.shape[0] != 1:
            raise ConfigError("spatial map must end in exactly one channel")
        if self.w4.weight.shape[0] != self.w3.weight.shape[1]:
            raise ConfigError("channel map must restore the input channel count")


@dataclass
class AdaptiveAttentionParams:
    base: SwsaParams | CwsaParams
    wp: LinearParams  # shared output projection, bias-free
    dw: Conv2dParams | None = None  # parallel depth-wise 3x3 on the value map
    aim: AimParams | None = None

    def __post_init__(self):
        if self.wp.bias is not None:
            raise ConfigError("output projection carries no bias")
        if self.dw is not None:
            c_out = self.dw.weight.shape[0]
            if self.dw.groups != c_out:
                raise ConfigError("parallel branch must be depth-wise (groups == C)")
        if self.aim is not None and self.dw is None:
            raise ConfigError("interaction requires the parallel conv branch")


def s_map(b: Tensor, p: AimParams) -> Tensor:
    """Spatial gate in (0,1)^[N,1,H,W]: sigmoid(w2(gelu(w1(b))))."""
    return sigmoid(conv2d(gelu(conv2d(b, p.w1)), p.w2))


def c_map(b: Tensor, p: AimParams) -> Tensor:
    """Channel gate in (0,1)^[N,C,1,1]: sigmoid(w4(gelu(w3(pool(b)))))."""
    return sigmoid(conv2d(gelu(conv2d(global_avg_pool(b), p.w3)), p.w4))


def s_i(a: Tensor, b: Tensor, p: AimParams) -> Tensor:
    """Re-weight ``a`` by the spatial map of ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"interaction operands differ: {a.shape} vs {b.shape}")
    return a * s_map(b, p)


def c_i(a: Tensor, b: Tensor, p: AimParams) -> Tensor:
    """Re-weight ``a`` by the channel map of ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"interaction operands differ: {a.shape} vs {b.shape}")
    return a * c_map(b, p)


def _value_map(x: Tensor, wv: LinearParams) -> Tensor:
    n, c, h, w = x.shape
    flat = x.permute((0, 2, 3, 1)).reshape((n, h * w, c))
    v = linear(flat, wv)
    return v.reshape((n, h, w, c)).permute((0, 3, 1, 2))


def as_sa(x: Tensor, p: AdaptiveAttentionParams) -> Tensor:
    """Adaptive spatial self-attention on NCHW input."""
    if not isinstance(p.base, SwsaParams):
        raise ConfigError("as_sa requires spatial-window attention parameters")
    n, c, h, w = x.shape
    y_s = shifted_sw_sa(x, p.base, wp=None)
    if p.dw is None:
        mixed = y_s
    else:
        y_w = conv2d(_value_map(x, p.base.wv), p.dw)
        if p.aim is None:
            mixed = y_s + y_w
        else:
            mixed = c_i(y_s, y_w, p.aim) + s_i(y_w, y_s, p.aim)
    flat = mixed.permute((0, 2, 3, 1)).reshape((n, h * w, c))
    out = linear(flat, p.wp)
    return out.reshape((n, h, w, c)).permute((0, 3, 1, 2))


def ac_sa(x: Tensor, p: AdaptiveAttentionParams) -> Tensor:
    """Adaptive channel self-attention on NCHW input."""
    if not isinstance(p.base, CwsaParams):
        raise ConfigError("ac_sa requires channel-wise attention parameters")
    n, c, h, w = x.shape
    y_c = cw_sa(x, p.base, wp=None)
    if p.dw is None:
        mixed = y_c
    else:
        y_w = conv2d(_value_map(x, p.base.wv), p.dw)
        if p.aim is None:
            mixed = y_c + y_w
        else:
            mixed = s_i(y_c, y_w, p.aim) + c_i(y_w, y_c, p.aim)
    flat = mixed.permute((0, 2, 3, 1)).reshape((n, h * w, c))
    out = linear(flat, p.wp)
    return out.reshape((n, h, w, c)).permute((0, 3, 1, 2))
