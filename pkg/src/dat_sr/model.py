"""Block composition and full model assembly.

A model is shallow conv -> residual groups -> reconstruction.  Each group holds
``2 * n_pairs`` blocks strictly alternating spatial (DSTB) and channel (DCTB)
attention, followed by a 3x3 refinement conv and a group residual; a global
residual wraps the whole body.  Blocks are pre-norm residual:

    x' = attention(LN(x)) + x
    y  = sgfn(LN(x')) + x'

The reconstruction trunk runs at 64 feature channels (conv C->64, pixel-shuffle
upsample stages at 64, final conv 64->3), the standard design for pixel-shuffle
SR heads; this is what places the preset parameter counts where they belong.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aim import AdaptiveAttentionParams, AimParams, ac_sa, as_sa
from .attention import AttentionGeometry, CwsaParams, RelPosBias, SwsaParams
from .config import ModelConfig
from .ops import (Conv2dParams, LayerNormParams, LinearParams, conv2d,
                  crop_spatial, gelu, layernorm, linear, pad_reflect, pixel_shuffle)
from .tensor import ConfigError, ShapeError, Tensor, split

RECON_FEATURES = 64

ABLATION_VARIANTS = ("cw_only", "sw_only", "alternating", "no_aim", "no_dwconv",
                     "ffn", "sgfn_no_conv", "sgfn_no_split")


@dataclass
class SgfnParams:
    """Gated feed-forward parameters.

    ``split=True`` halves the expanded features into a multiplicative gate and
    a conv operand (first half gates, second half is convolved); ``wd=None``
    drops the depth-wise conv.  ``split=False, wd=None`` degenerates to the
    plain two-layer FFN.
    """

    wp1: LinearParams
    wp2: LinearParams
    wd: Conv2dParams | None = None
    split: bool = True

    def __post_init__(self):
        hidden = self.wp1.weight.shape[0]
        if self.split and hidden % 2 != 0:
            raise ConfigError(f"hidden width {hidden} must be even to split")
        inner = hidden // 2 if self.split else hidden
        if self.wd is not None and (self.wd.weight.shape[0] != inner or self.wd.groups != inner):
            raise ConfigError("gate conv must be depth-wise on the conv operand")
        if self.wp2.weight.shape[1] != inner:
            raise ConfigError(f"wp2 expects {inner} input channels")


@dataclass
class BlockParams:
    ln1: LayerNormParams
    ln2: LayerNormParams
    attn: AdaptiveAttentionParams
    sgfn: SgfnParams
    kind: str  # "DSTB" | "DCTB"

    def __post_init__(self):
        if self.kind not in ("DSTB", "DCTB"):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        spatial = isinstance(self.attn.base, SwsaParams)
        if spatial != (self.kind == "DSTB"):
            raise ConfigError(f"{self.kind} paired with wrong attention parameters")


@dataclass
class GroupParams:
    blocks: list[BlockParams]
    refine: Conv2dParams


@dataclass
class ReconParams:
    conv_before: Conv2dParams
    stages: list[tuple[Conv2dParams, int]]  # (conv, shuffle factor)
    conv_last: Conv2dParams


@dataclass
class DatModel:
    shallow: Conv2dParams
    groups: list[GroupParams]
    recon: ReconParams
    config: ModelConfig


# -- forward ----------------------------------------------------------------


def sgfn(x: Tensor, p: SgfnParams) -> Tensor:
    """Expand, gate (optionally through a depth-wise conv), project back."""
    n, c, h, w = x.shape
    flat = x.permute((0, 2, 3, 1)).reshape((n, h * w, c))
    expanded = gelu(linear(flat, p.wp1))
    hidden = expanded.shape[-1]
    if p.split:
        gate, conv_in = split(expanded, axis=-1, sizes=[hidden // 2, hidden // 2])
    else:
        gate, conv_in = expanded, expanded
    if p.wd is not None:
        inner = conv_in.shape[-1]
        img = conv_in.reshape((n, h, w, inner)).permute((0, 3, 1, 2))
        conv_out = conv2d(img, p.wd)
        conv_in = conv_out.permute((0, 2, 3, 1)).reshape((n, h * w, inner))
        mixed = gate * conv_in
    elif p.split:
        mixed = gate * conv_in
    else:
        mixed = expanded  # plain FFN
    out = linear(mixed, p.wp2)
    return out.reshape((n, h, w, c)).permute((0, 3, 1, 2))


def datb_forward(x: Tensor, p: BlockParams) -> Tensor:
    """Pre-norm residual attention followed by pre-norm residual feed-forward."""
    attend = as_sa if p.kind == "DSTB" else ac_sa
    y = attend(layernorm(x, p.ln1), p.attn) + x
    return sgfn(layernorm(y, p.ln2), p.sgfn) + y


def dat_forward(m: DatModel, img: Tensor) -> Tensor:
    """Map an [N,3,H,W] image in [0,1] to its [N,3,sH,sW] reconstruction."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected [N,3,H,W] input, got {img.shape}")
    n, _, h, w = img.shape
    wh, ww = m.config.window
    scale = m.config.scale

    fs = conv2d(img, m.shallow)
    pad_h = (wh - h % wh) % wh
    pad_w = (ww - w % ww) % ww
    fs = pad_reflect(fs, pad_h, pad_w)

    x = fs
    for group in m.groups:
        g_in = x
        for block in group.blocks:
            x = datb_forward(x, block)
        x = conv2d(x, group.refine) + g_in
    x = x + fs  # global deep-feature residual

    y = conv2d(x, m.recon.conv_before)
    for conv, r in m.recon.stages:
        y = pixel_shuffle(conv2d(y, conv), r)
    y = conv2d(y, m.recon.conv_last)
    return crop_spatial(y, scale * h, scale * w)


# -- construction -------------------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with samples beyond two standard deviations redrawn."""
    out = rng.standard_normal(shape)
    while True:
        bad = np.abs(out) > 2.0
        if not bad.any():
            break
        out[bad] = rng.standard_normal(int(bad.sum()))
    return (out * std).astype(np.float32)


def _make_linear(rng, c_in: int, c_out: int, bias: bool) -> LinearParams:
    weight = Tensor(_trunc_normal(rng, (c_out, c_in)), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True) if bias else None
    return LinearParams(weight=weight, bias=b)


def _make_conv(rng, c_in: int, c_out: int, k: int, groups: int = 1, bias: bool = True) -> Conv2dParams:
    weight = Tensor(_trunc_normal(rng, (c_out, c_in // groups, k, k)), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True) if bias else None
    return Conv2dParams(weight=weight, bias=b, groups=groups)


def _make_layernorm(c: int) -> LayerNormParams:
    return LayerNormParams(
        gamma=Tensor(np.ones(c, dtype=np.float32), requires_grad=True),
        beta=Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
    )


def _make_sgfn(rng, c: int, expansion: int, mode: str) -> SgfnParams:
    hidden = c * expansion
    if mode == "standard":
        wd = _make_conv(rng, hidden // 2, hidden // 2, 3, groups=hidden // 2)
        return SgfnParams(wp1=_make_linear(rng, c, hidden, bias=True),
                          wp2=_make_linear(rng, hidden // 2, c, bias=True), wd=wd, split=True)
    if mode == "no_conv":
        return SgfnParams(wp1=_make_linear(rng, c, hidden, bias=True),
                          wp2=_make_linear(rng, hidden // 2, c, bias=True), wd=None, split=True)
    if mode == "no_split":
        wd = _make_conv(rng, hidden, hidden, 3, groups=hidden)
        return SgfnParams(wp1=_make_linear(rng, c, hidden, bias=True),
                          wp2=_make_linear(rng, hidden, c, bias=True), wd=wd, split=False)
    if mode == "ffn":
        return SgfnParams(wp1=_make_linear(rng, c, hidden, bias=True),
                          wp2=_make_linear(rng, hidden, c, bias=True), wd=None, split=False)
    raise ConfigError(f"unknown feed-forward mode {mode!r}")


def _make_aim(rng, c: int, r1: int, r2: int) -> AimParams:
    c1 = math.ceil(c / r1)
    c2 = math.ceil(c / r2)
    return AimParams(
        w1=_make_conv(rng, c, c1, 1),
        w2=_make_conv(rng, c1, 1, 1),
        w3=_make_conv(rng, c, c2, 1),
        w4=_make_conv(rng, c2, c, 1),
    )


def _make_block(rng, cfg: ModelConfig, kind: str, shifted: bool,
                use_dw: bool, use_aim: bool, sgfn_mode: str) -> BlockParams:
    c, heads = cfg.channels, cfg.heads
    wh, ww = cfg.window
    if kind == "DSTB":
        geometry = AttentionGeometry(
            window_h=wh, window_w=ww,
            shift_h=wh // 2 if shifted else 0,
            shift_w=ww // 2 if shifted else 0,
            heads=heads,
        )
        table = Tensor(np.zeros((heads, 2 * wh - 1, 2 * ww - 1), dtype=np.float32), requires_grad=True)
        base = SwsaParams(
            wq=_make_linear(rng, c, c, bias=False),
            wk=_make_linear(rng, c, c, bias=False),
            wv=_make_linear(rng, c, c, bias=False),
            rel_pos=RelPosBias.create(geometry, table),
            geometry=geometry,
        )
    else:
        base = CwsaParams(
            wq=_make_linear(rng, c, c, bias=False),
            wk=_make_linear(rng, c, c, bias=False),
            wv=_make_linear(rng, c, c, bias=False),
            alpha=Tensor(np.zeros(heads, dtype=np.float32), requires_grad=True),
            heads=heads,
        )
    attn = AdaptiveAttentionParams(
        base=base,
        wp=_make_linear(rng, c, c, bias=False),
        dw=_make_conv(rng, c, c, 3, groups=c) if use_dw else None,
        aim=_make_aim(rng, c, cfg.r1, cfg.r2) if use_aim else None,
    )
    return BlockParams(
        ln1=_make_layernorm(c),
        ln2=_make_layernorm(c),
        attn=attn,
        sgfn=_make_sgfn(rng, c, cfg.sgfn_expansion, sgfn_mode),
        kind=kind,
    )


def _make_recon(rng, c: int, scale: int) -> ReconParams:
    feat = RECON_FEATURES
    stages: list[tuple[Conv2dParams, int]] = []
    if scale in (2, 3):
        stages.append((_make_conv(rng, feat, feat * scale * scale, 3), scale))
    elif scale == 4:
        stages.append((_make_conv(rng, feat, feat * 4, 3), 2))
        stages.append((_make_conv(rng, feat, feat * 4, 3), 2))
    else:
        raise ConfigError(f"unsupported scale {scale}")
    return ReconParams(
        conv_before=_make_conv(rng, c, feat, 3),
        stages=stages,
        conv_last=_make_conv(rng, feat, 3, 3),
    )


def _dstb_shifted(cfg: ModelConfig, ordinal: int) -> bool:
    if cfg.shift_policy == "always":
        return True
    if cfg.shift_policy == "never":
        return False
    return ordinal % 2 == 1


def _build(cfg: ModelConfig, rng_seed: int, kinds: str = "alternating",
           use_dw: bool = True, use_aim: bool = True, sgfn_mode: str = "standard") -> DatModel:
    rng = np.random.default_rng(rng_seed)
    shallow = _make_conv(rng, 3, cfg.channels, 3)
    groups: list[GroupParams] = []
    for _ in range(cfg.n_groups):
        blocks: list[BlockParams] = []
        spatial_ordinal = 0
        for index in range(2 * cfg.n_pairs):
            if kinds == "alternating":
                kind = "DSTB" if index % 2 == 0 else "DCTB"
            else:
                kind = "DSTB" if kinds == "sw_only" else "DCTB"
            shifted = False
            if kind == "DSTB":
                shifted = _dstb_shifted(cfg, spatial_ordinal)
                spatial_ordinal += 1
            blocks.append(_make_block(rng, cfg, kind, shifted, use_dw, use_aim, sgfn_mode))
        groups.append(GroupParams(blocks=blocks, refine=_make_conv(rng, cfg.channels, cfg.channels, 3)))
    recon = _make_recon(rng, cfg.channels, cfg.scale)
    model = DatModel(shallow=shallow, groups=groups, recon=recon, config=cfg)
    for name, tensor in named_params(model):
        tensor.name = name
    return model


def build_model(cfg: ModelConfig, rng_seed: int = 0) -> DatModel:
    """Fully initialized model for the given configuration."""
    return _build(cfg, rng_seed)


def build_ablation_variant(which: str, cfg: ModelConfig, rng_seed: int = 0) -> DatModel:
    """Structural study variants; `alternating` is the standard build."""
    if which == "alternating":
        return _build(cfg, rng_seed)
    if which in ("sw_only", "cw_only"):
        return _build(cfg, rng_seed, kinds=which)
    if which == "no_aim":
        return _build(cfg, rng_seed, use_aim=False)
    if which == "no_dwconv":
        return _build(cfg, rng_seed, use_dw=False, use_aim=False)
    if which == "ffn":
        return _build(cfg, rng_seed, sgfn_mode="ffn")
    if which == "sgfn_no_conv":
        return _build(cfg, rng_seed, sgfn_mode="no_conv")
    if which == "sgfn_no_split":
        return _build(cfg, rng_seed, sgfn_mode="no_split")
    raise ConfigError(f"unknown ablation variant {which!r}; have {ABLATION_VARIANTS}")


# -- parameter traversal ------------------------------------------------------


def _linear_entries(prefix: str, p: LinearParams):
    yield f"{prefix}.weight", p.weight
    if p.bias is not None:
        yield f"{prefix}.bias", p.bias


def _conv_entries(prefix: str, p: Conv2dParams):
    yield f"{prefix}.weight", p.weight
    if p.bias is not None:
        yield f"{prefix}.bias", p.bias


def named_params(m: DatModel) -> list[tuple[str, Tensor]]:
    """Canonical (name, tensor) pairs: group{i}.block{j}.<submodule>.<param>."""
    entries: list[tuple[str, Tensor]] = []
    entries.extend(_conv_entries("shallow", m.shallow))
    for gi, group in enumerate(m.groups):
        for bj, block in enumerate(group.blocks):
            prefix = f"group{gi}.block{bj}"
            entries.append((f"{prefix}.ln1.gamma", block.ln1.gamma))
            entries.append((f"{prefix}.ln1.beta", block.ln1.beta))
            entries.append((f"{prefix}.ln2.gamma", block.ln2.gamma))
            entries.append((f"{prefix}.ln2.beta", block.ln2.beta))
            base = block.attn.base
            entries.extend(_linear_entries(f"{prefix}.attn.wq", base.wq))
            entries.extend(_linear_entries(f"{prefix}.attn.wk", base.wk))
            entries.extend(_linear_entries(f"{prefix}.attn.wv", base.wv))
            if isinstance(base, SwsaParams):
                entries.append((f"{prefix}.attn.rel_pos.table", base.rel_pos.table))
            else:
                entries.append((f"{prefix}.attn.alpha", base.alpha))
            if block.attn.dw is not None:
                entries.extend(_conv_entries(f"{prefix}.attn.dw", block.attn.dw))
            if block.attn.aim is not None:
                aim = block.attn.aim
                entries.extend(_conv_entries(f"{prefix}.attn.aim.w1", aim.w1))
                entries.extend(_conv_entries(f"{prefix}.attn.aim.w2", aim.w2))
                entries.extend(_conv_entries(f"{prefix}.attn.aim.w3", aim.w3))
                entries.extend(_conv_entries(f"{prefix}.attn.aim.w4", aim.w4))
            entries.extend(_linear_entries(f"{prefix}.attn.wp", block.attn.wp))
            entries.extend(_linear_entries(f"{prefix}.sgfn.wp1", block.sgfn.wp1))
            if block.sgfn.wd is not None:
                entries.extend(_conv_entries(f"{prefix}.sgfn.wd", block.sgfn.wd))
            entries.extend(_linear_entries(f"{prefix}.sgfn.wp2", block.sgfn.wp2))
        entries.extend(_conv_entries(f"group{gi}.refine", group.refine))
    entries.extend(_conv_entries("recon.conv_before", m.recon.conv_before))
    for k, (conv, _) in enumerate(m.recon.stages):
        entries.extend(_conv_entries(f"recon.up{k}", conv))
    entries.extend(_conv_entries("recon.conv_last", m.recon.conv_last))
    return entries


def count_params(m: DatModel) -> int:
    """Exact number of learnable scalars."""
    return sum(t.size for _, t in named_params(m))


def set_dtype(m: DatModel, dtype) -> DatModel:
    """Cast every parameter in place (float64 for gradient checking)."""
    for _, t in named_params(m):
        t.data = t.data.astype(dtype)
    return m


# -- FLOPs accounting ---------------------------------------------------------


def _conv_macs(p: Conv2dParams, positions: int) -> int:
    c_out, c_in_g, kh, kw = p.weight.shape
    return positions * c_out * c_in_g * kh * kw


def estimate_flops(m: DatModel, out_shape: tuple[int, int, int]) -> int:
    """Multiply-accumulate count for one forward pass at the given output size.

    Convention: one MAC counts as one FLOP; conv, linear, and the attention
    score/value matmuls are included; softmax, normalization, activations,
    pooling, and the tiny interaction maps' sigmoid/GELU are excluded.  Body
    terms use the window-padded spatial extents actually computed on.
    """
    channels_out, out_h, out_w = out_shape
    if channels_out != 3:
        raise ConfigError(f"output must have 3 channels, got {channels_out}")
    scale = m.config.scale
    if out_h % scale != 0 or out_w % scale != 0:
        raise ConfigError(f"output {out_h}x{out_w} not divisible by scale {scale}")
    h, w = out_h // scale, out_w // scale
    wh, ww = m.config.window
    hp = math.ceil(h / wh) * wh
    wp = math.ceil(w / ww) * ww
    n_body = hp * wp
    c = m.config.channels
    heads = m.config.heads
    d = c // heads

    total = _conv_macs(m.shallow, h * w)
    for group in m.groups:
        for block in group.blocks:
            base = block.attn.base
            total += 3 * n_body * c * c  # q, k, v projections
            if isinstance(base, SwsaParams):
                n_w = base.geometry.window_pixels
                total += 2 * n_body * n_w * c  # scores + values, all windows/heads
            else:
                total += 2 * n_body * d * c  # d x d channel scores + values per head
            total += n_body * c * c  # output projection
            if block.attn.dw is not None:
                total += _conv_macs(block.attn.dw, n_body)
            if block.attn.aim is not None:
                aim = block.attn.aim
                total += _conv_macs(aim.w1, n_body) + _conv_macs(aim.w2, n_body)
                total += _conv_macs(aim.w3, 1) + _conv_macs(aim.w4, 1)
            hidden = block.sgfn.wp1.weight.shape[0]
            inner = block.sgfn.wp2.weight.shape[1]
            total += n_body * c * hidden
            if block.sgfn.wd is not None:
                total += _conv_macs(block.sgfn.wd, n_body)
            total += n_body * inner * c
        total += _conv_macs(group.refine, n_body)

    positions = n_body
    total += _conv_macs(m.recon.conv_before, positions)
    for conv, r in m.recon.stages:
        total += _conv_macs(conv, positions)
        positions *= r * r
    total += _conv_macs(m.recon.conv_last, positions)
    return int(total)
