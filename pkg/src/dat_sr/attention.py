"""Spatial-window and channel-wise self-attention.

The spatial mechanism attends inside non-overlapping rectangular windows with
a learnable per-head relative-position bias table; every second spatial block
shifts the window grid by half a window (cyclic roll) and masks attention
between pixels that were not adjacent before rolling.  The channel mechanism
attends between channels over all pixels, with scores divided by a learnable
positive per-head temperature.

Output projections: both mechanisms optionally apply the fused projection
``wp``; callers that aggregate the attention output with a parallel branch
(see :mod:`dat_sr.aim`) omit it here and apply it after the interaction.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .ops import LinearParams, linear, softmax
from .tensor import ConfigError, ShapeError, Tensor, _result, cyclic_roll, matmul

MASK_FILL = -1e9


@dataclass(frozen=True)
class AttentionGeometry:
    window_h: int
    window_w: int
    shift_h: int = 0
    shift_w: int = 0
    heads: int = 1

    def __post_init__(self):
        if self.window_h < 1 or self.window_w < 1:
            raise ConfigError("window extents must be positive")
        if not (0 <= self.shift_h < self.window_h and 0 <= self.shift_w < self.window_w):
            raise ConfigError("shifts must satisfy 0 <= shift < window")
        if self.heads < 1:
            raise ConfigError("head count must be positive")

    @property
    def window_pixels(self) -> int:
        return self.window_h * self.window_w

    @property
    def shifted(self) -> bool:
        return self.shift_h > 0 or self.shift_w > 0


def rel_pos_index(window_h: int, window_w: int) -> np.ndarray:
    """Flat table index per in-window pixel pair, keyed by relative displacement."""
    ys, xs = np.meshgrid(np.arange(window_h), np.arange(window_w), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])  # [2, Nw]
    rel = coords[:, :, None] - coords[:, None, :]  # [2, Nw, Nw]
    dy = rel[0] + window_h - 1
    dx = rel[1] + window_w - 1
    return (dy * (2 * window_w - 1) + dx).astype(np.intp)


@dataclass
class RelPosBias:
    """Learnable bias table [heads, 2*wh-1, 2*ww-1] plus its pair-index map."""

    table: Tensor
    index: np.ndarray

    @classmethod
    def create(cls, geometry: AttentionGeometry, table: Tensor) -> "RelPosBias":
        expected = (geometry.heads, 2 * geometry.window_h - 1, 2 * geometry.window_w - 1)
        if table.shape != expected:
            raise ConfigError(f"bias table shape {table.shape}, expected {expected}")
        return cls(table=table, index=rel_pos_index(geometry.window_h, geometry.window_w))


def rel_pos_bias(rp: RelPosBias) -> Tensor:
    """Gather the bias table into per-pair form [heads, Nw, Nw]."""
    heads = rp.table.shape[0]
    n = rp.index.shape[0]
    flat = rp.table.data.reshape(heads, -1)
    idx = rp.index.ravel()
    out = flat[:, idx].reshape(heads, n, n)
    table = rp.table

    def backward(g: np.ndarray) -> None:
        gt = np.zeros_like(flat)
        np.add.at(gt, (slice(None), idx), g.reshape(heads, -1))
        table._accumulate(gt.reshape(table.shape))

    return _result(np.ascontiguousarray(out), (table,), backward)


@dataclass
class SwsaParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    rel_pos: RelPosBias
    geometry: AttentionGeometry

    def __post_init__(self):
        c = self.wq.weight.shape[0]
        for p in (self.wq, self.wk, self.wv):
            if p.weight.shape != (c, c) or p.bias is not None:
                raise ConfigError("attention projections must be square and bias-free")
        if c % self.geometry.heads != 0:
            raise ConfigError(f"C={c} not divisible by heads={self.geometry.heads}")


@dataclass
class CwsaParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    alpha: Tensor  # raw per-head log-temperature; consumed as exp(alpha)
    heads: int

    def __post_init__(self):
        c = self.wq.weight.shape[0]
        for p in (self.wq, self.wk, self.wv):
            if p.weight.shape != (c, c) or p.bias is not None:
                raise ConfigError("attention projections must be square and bias-free")
        if self.alpha.shape != (self.heads,):
            raise ConfigError("one raw temperature per head required")
        if c % self.heads != 0:
            raise ConfigError(f"C={c} not divisible by heads={self.heads}")


def _nchw_to_flat(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return x.permute((0, 2, 3, 1)).reshape((n, h * w, c))


def _flat_to_nchw(x: Tensor, h: int, w: int) -> Tensor:
    n, _, c = x.shape
    return x.reshape((n, h, w, c)).permute((0, 3, 1, 2))


def window_partition(x: Tensor, g: AttentionGeometry) -> Tensor:
    """[N,C,H,W] -> [N*nWin, Nw, C]; windows raster-ordered, pixels raster-flattened."""
    n, c, h, w = x.shape
    if h % g.window_h != 0 or w % g.window_w != 0:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by window {g.window_h}x{g.window_w}")
    nh, nw = h // g.window_h, w // g.window_w
    t = x.permute((0, 2, 3, 1))  # NHWC
    t = t.reshape((n, nh, g.window_h, nw, g.window_w, c))
    t = t.permute((0, 1, 3, 2, 4, 5))
    return t.reshape((n * nh * nw, g.window_pixels, c))


def window_reverse(windows: Tensor, g: AttentionGeometry, n: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nh, nw = h // g.window_h, w // g.window_w
    c = windows.shape[-1]
    t = windows.reshape((n, nh, nw, g.window_h, g.window_w, c))
    t = t.permute((0, 1, 3, 2, 4, 5))
    t = t.reshape((n, h, w, c))
    return t.permute((0, 3, 1, 2))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, n, c = t.shape
    return t.reshape((b, n, heads, c // heads)).permute((0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    b, heads, n, d = t.shape
    return t.permute((0, 2, 1, 3)).reshape((b, n, heads * d))


def shift_region_labels(h: int, w: int, g: AttentionGeometry) -> np.ndarray:
    """Region label per pixel of the rolled frame; unequal labels may not attend."""
    labels = np.zeros((h, w), dtype=np.int64)
    h_slices = (slice(0, -g.window_h), slice(-g.window_h, -g.shift_h or None), slice(-g.shift_h or None, None))
    w_slices = (slice(0, -g.window_w), slice(-g.window_w, -g.shift_w or None), slice(-g.shift_w or None, None))
    count = 0
    for hs in h_slices:
        for ws in w_slices:
            labels[hs, ws] = count
            count += 1
    return labels


@functools.lru_cache(maxsize=64)
def _shift_window_mask(h: int, w: int, g: AttentionGeometry) -> np.ndarray:
    """Additive mask [nWin, Nw, Nw]: 0 within a region, MASK_FILL across regions."""
    labels = shift_region_labels(h, w, g)
    windows = Tensor(labels[None, None].astype(np.float32))
    wins = window_partition(windows, g).data.reshape(-1, g.window_pixels)
    diff = wins[:, :, None] - wins[:, None, :]
    return np.where(diff != 0, np.float32(MASK_FILL), np.float32(0.0))


def sw_sa(x: Tensor, p: SwsaParams, mask: np.ndarray | None = None,
          wp: LinearParams | None = None) -> Tensor:
    """Spatial-window self-attention on NCHW input.

    Per window and head: softmax(q k^T / sqrt(d) + bias (+ mask)) applied to v.
    ``mask`` is an additive [nWin, Nw, Nw] array; ``wp`` fuses heads when given.
    """
    n, c, h, w = x.shape
    g = p.geometry
    heads = g.heads
    d = c // heads
    flat = _nchw_to_flat(x)
    q = window_partition(_flat_to_nchw(linear(flat, p.wq), h, w), g)
    k = window_partition(_flat_to_nchw(linear(flat, p.wk), h, w), g)
    v = window_partition(_flat_to_nchw(linear(flat, p.wv), h, w), g)
    q = _split_heads(q, heads)  # [B, h, Nw, d]
    k = _split_heads(k, heads)
    v = _split_heads(v, heads)
    scores = matmul(q, k.permute((0, 1, 3, 2))) * (1.0 / np.sqrt(d))
    bias = rel_pos_bias(p.rel_pos)
    if bias.dtype != scores.dtype:
        bias = bias.astype(scores.dtype)
    scores = scores + bias.reshape((1, heads, g.window_pixels, g.window_pixels))
    if mask is not None:
        n_win = mask.shape[0]
        scores = scores.reshape((n, n_win, heads, g.window_pixels, g.window_pixels))
        scores = scores + Tensor(mask.astype(scores.dtype.type)[None, :, None])
        scores = scores.reshape((n * n_win, heads, g.window_pixels, g.window_pixels))
    attn = softmax(scores, axis=-1)
    out = _merge_heads(matmul(attn, v))
    out = window_reverse(out, g, n, h, w)
    if wp is not None:
        out = _flat_to_nchw(linear(_nchw_to_flat(out), wp), h, w)
    return out


def shifted_sw_sa(x: Tensor, p: SwsaParams, wp: LinearParams | None = None) -> Tensor:
    """SW-SA with the cyclic half-window shift; identical to sw_sa at shift (0, 0)."""
    g = p.geometry
    if not g.shifted:
        return sw_sa(x, p, mask=None, wp=wp)
    _, _, h, w = x.shape
    rolled = cyclic_roll(x, (-g.shift_h, -g.shift_w))
    mask = _shift_window_mask(h, w, g)
    out = sw_sa(rolled, p, mask=mask, wp=wp)
    return cyclic_roll(out, (g.shift_h, g.shift_w))


def cw_sa(x: Tensor, p: CwsaParams, wp: LinearParams | None = None) -> Tensor:
    """Channel-wise self-attention: per head, v @ softmax(q^T k / temperature)."""
    n, c, h, w = x.shape
    heads = p.heads
    flat = _nchw_to_flat(x)  # [N, HW, C]
    q = _split_heads(linear(flat, p.wq), heads)  # [N, h, HW, d]
    k = _split_heads(linear(flat, p.wk), heads)
    v = _split_heads(linear(flat, p.wv), heads)
    scores = matmul(q.permute((0, 1, 3, 2)), k)  # [N, h, d, d]
    inv_temp = (-p.alpha).exp()
    if inv_temp.dtype != scores.dtype:
        inv_temp = inv_temp.astype(scores.dtype)
    scores = scores * inv_temp.reshape((1, heads, 1, 1))
    attn = softmax(scores, axis=-1)
    out = _merge_heads(matmul(v, attn))  # [N, HW, C]
    if wp is not None:
        out = linear(out, wp)
    return _flat_to_nchw(out, h, w)
