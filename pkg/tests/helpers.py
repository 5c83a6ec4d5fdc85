"""Shared parameter builders for the test suite."""
import numpy as np

from dat_sr.aim import AdaptiveAttentionParams, AimParams
from dat_sr.attention import AttentionGeometry, CwsaParams, RelPosBias, SwsaParams
from dat_sr.ops import Conv2dParams, LinearParams
from dat_sr.tensor import Tensor


def _linear(rng, c_out, c_in=None, scale=0.3, bias=False):
    c_in = c_in if c_in is not None else c_out
    weight = Tensor((rng.standard_normal((c_out, c_in)) * scale).astype(np.float32))
    b = Tensor((rng.standard_normal(c_out) * scale).astype(np.float32)) if bias else None
    return LinearParams(weight=weight, bias=b)


def _conv(rng, c_in, c_out, k, groups=1, scale=0.3, bias=True, zero=False):
    shape = (c_out, c_in // groups, k, k)
    weight = np.zeros(shape, np.float32) if zero else (rng.standard_normal(shape) * scale).astype(np.float32)
    b = np.zeros(c_out, np.float32) if zero else (rng.standard_normal(c_out) * scale).astype(np.float32)
    return Conv2dParams(weight=Tensor(weight), bias=Tensor(b), groups=groups)


def make_swsa(c=4, heads=1, window=(2, 2), shift=(0, 0), seed=0, table_scale=0.1):
    rng = np.random.default_rng(seed)
    geometry = AttentionGeometry(window_h=window[0], window_w=window[1],
                                 shift_h=shift[0], shift_w=shift[1], heads=heads)
    table = Tensor((rng.standard_normal(
        (heads, 2 * window[0] - 1, 2 * window[1] - 1)) * table_scale).astype(np.float32))
    return SwsaParams(wq=_linear(rng, c), wk=_linear(rng, c), wv=_linear(rng, c),
                      rel_pos=RelPosBias.create(geometry, table), geometry=geometry)


def make_cwsa(c=4, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    alpha = Tensor((rng.standard_normal(heads) * 0.2).astype(np.float32))
    return CwsaParams(wq=_linear(rng, c), wk=_linear(rng, c), wv=_linear(rng, c),
                      alpha=alpha, heads=heads)


def make_aim(c=4, r1=2, r2=2, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    c1 = -(-c // r1)
    c2 = -(-c // r2)
    return AimParams(
        w1=_conv(rng, c, c1, 1, zero=zero),
        w2=_conv(rng, c1, 1, 1, zero=zero),
        w3=_conv(rng, c, c2, 1, zero=zero),
        w4=_conv(rng, c2, c, 1, zero=zero),
    )


def make_adaptive(base, c=4, seed=0, with_dw=True, with_aim=True, zero_aim=False,
                  zero_dw=False):
    rng = np.random.default_rng(seed + 1000)
    return AdaptiveAttentionParams(
        base=base,
        wp=_linear(rng, c),
        dw=_conv(rng, c, c, 3, groups=c, zero=zero_dw) if with_dw else None,
        aim=make_aim(c=c, seed=seed + 2000, zero=zero_aim) if with_aim else None,
    )
