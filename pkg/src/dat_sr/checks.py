"""Named gradient-check scenarios for every differentiable operation.

Each target builds a float64 setup with a fixed seed, reduces the op output to
a scalar through a random probe so every coordinate matters, and compares
reverse-mode gradients against central differences.  Smooth primitives must
agree to 1e-6, compositions to 1e-4.
"""
from __future__ import annotations

import numpy as np

from . import aim as aim_mod
from . import attention as attn_mod
from .config import ModelConfig
from .model import build_model, dat_forward, named_params, set_dtype
from .ops import (conv2d, gelu, global_avg_pool, layernorm, pixel_shuffle,
                  sigmoid, softmax)
from .tensor import Tensor, concat, cyclic_roll, matmul, split
from .train import GradcheckReport, gradcheck, l1_loss

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


def _probe_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    return (out * Tensor(rng.standard_normal(out.shape))).sum()


def _param(rng, shape, name: str) -> Tensor:
    return Tensor(rng.standard_normal(shape) * 0.5, requires_grad=True, name=name)


def _check_matmul(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    a = _param(rng, (2, 3, 4), "a")
    b = _param(rng, (2, 4, 5), "b")

    def fn():
        return _probe_sum(matmul(a, b), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("a", a), ("b", b)], n_coords=40, seed=seed, threshold=PRIMITIVE_TOL)


def _check_linear(seed: int) -> GradcheckReport:
    from .ops import LinearParams, linear

    rng = np.random.default_rng(seed)
    w = _param(rng, (5, 3), "weight")
    b = _param(rng, (5,), "bias")
    x = _param(rng, (4, 3), "x")
    p = LinearParams(weight=w, bias=b)

    def fn():
        return _probe_sum(linear(x, p), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("weight", w), ("bias", b), ("x", x)], n_coords=40, seed=seed,
                     threshold=PRIMITIVE_TOL)


def _conv_scenario(seed: int, groups: int) -> GradcheckReport:
    from .ops import Conv2dParams

    rng = np.random.default_rng(seed)
    c = 4
    w = _param(rng, (c, c // groups, 3, 3), "weight")
    b = _param(rng, (c,), "bias")
    x = _param(rng, (2, c, 5, 5), "x")
    p = Conv2dParams(weight=w, bias=b, groups=groups)

    def fn():
        return _probe_sum(conv2d(x, p), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("weight", w), ("bias", b), ("x", x)], n_coords=60, seed=seed,
                     threshold=PRIMITIVE_TOL)


def _check_layernorm(seed: int) -> GradcheckReport:
    from .ops import LayerNormParams

    rng = np.random.default_rng(seed)
    c = 6
    gamma = Tensor(1.0 + 0.2 * rng.standard_normal(c), requires_grad=True, name="gamma")
    beta = _param(rng, (c,), "beta")
    # Wide channel spread: normalization is scale-invariant, while the
    # finite-difference truncation error shrinks quadratically with it.
    x = Tensor(rng.standard_normal((2, c, 3, 3)) * 3.0, requires_grad=True, name="x")
    p = LayerNormParams(gamma=gamma, beta=beta)

    def fn():
        return _probe_sum(layernorm(x, p), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("gamma", gamma), ("beta", beta), ("x", x)], n_coords=60, seed=seed,
                     threshold=PRIMITIVE_TOL)


def _check_softmax(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _param(rng, (3, 7), "x")

    def fn():
        return _probe_sum(softmax(x, axis=-1), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=21, seed=seed, threshold=PRIMITIVE_TOL)


def _pointwise_scenario(seed: int, op) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _param(rng, (4, 5), "x")

    def fn():
        return _probe_sum(op(x), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=20, seed=seed, threshold=PRIMITIVE_TOL)


def _check_elementwise(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    a = _param(rng, (2, 3, 4), "a")
    b = _param(rng, (2, 1, 4), "b")

    def fn():
        return _probe_sum(a * b + (a - b), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("a", a), ("b", b)], n_coords=32, seed=seed, threshold=PRIMITIVE_TOL)


def _check_concat_split(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    a = _param(rng, (2, 3), "a")
    b = _param(rng, (2, 5), "b")

    def fn():
        joined = concat([a, b], axis=1)
        left, right = split(joined, axis=1, sizes=[4, 4])
        probe = np.random.default_rng(seed + 1)
        return _probe_sum(left, probe) + _probe_sum(right, probe)

    return gradcheck(fn, [("a", a), ("b", b)], n_coords=16, seed=seed, threshold=PRIMITIVE_TOL)


def _check_roll(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 3, 4, 5), "x")

    def fn():
        return _probe_sum(cyclic_roll(x, (1, 2)), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=40, seed=seed, threshold=PRIMITIVE_TOL)


def _check_pooling(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 3, 4, 5), "x")

    def fn():
        return _probe_sum(global_avg_pool(x), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=40, seed=seed, threshold=PRIMITIVE_TOL)


def _check_pixel_shuffle(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _param(rng, (1, 8, 3, 3), "x")

    def fn():
        return _probe_sum(pixel_shuffle(x, 2), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=40, seed=seed, threshold=PRIMITIVE_TOL)


def _check_pad_crop(seed: int) -> GradcheckReport:
    from .ops import crop_spatial, pad_reflect

    rng = np.random.default_rng(seed)
    x = _param(rng, (1, 2, 4, 5), "x")

    def fn():
        padded = pad_reflect(x, 3, 6)  # wraps past the extent on the wide axis
        return _probe_sum(crop_spatial(padded, 5, 9), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("x", x)], n_coords=40, seed=seed, threshold=PRIMITIVE_TOL)


def _check_rel_pos_bias(seed: int) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    geometry = attn_mod.AttentionGeometry(window_h=2, window_w=3, heads=2)
    table = _param(rng, (2, 3, 5), "table")
    rp = attn_mod.RelPosBias.create(geometry, table)

    def fn():
        return _probe_sum(attn_mod.rel_pos_bias(rp), np.random.default_rng(seed + 1))

    return gradcheck(fn, [("table", table)], n_coords=30, seed=seed, threshold=PRIMITIVE_TOL)


def _tiny_block_config(shifted: bool) -> ModelConfig:
    return ModelConfig(n_groups=1, n_pairs=1, channels=4, heads=2, window=(2, 2),
                       sgfn_expansion=2, scale=2,
                       shift_policy="always" if shifted else "never")


def _block_scenario(seed: int, shifted: bool = False):
    """Float64 tiny model with re-randomized parameters, plus an input map."""
    model = set_dtype(build_model(_tiny_block_config(shifted), rng_seed=seed), np.float64)
    rng = np.random.default_rng(seed + 7)
    for _, p in named_params(model):
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)) * 0.5)
    return model, x, rng


def _subset(model, prefix: str):
    return [(n, p) for n, p in named_params(model) if n.startswith(prefix)]


def _check_sw_sa(seed: int) -> GradcheckReport:
    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[0]

    def fn():
        out = attn_mod.sw_sa(x, block.attn.base, wp=block.attn.wp)
        return _probe_sum(out, np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block0.attn"), n_coords=60, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_shifted_sw_sa(seed: int) -> GradcheckReport:
    model, x, _ = _block_scenario(seed, shifted=True)
    block = model.groups[0].blocks[0]

    def fn():
        out = attn_mod.shifted_sw_sa(x, block.attn.base, wp=block.attn.wp)
        return _probe_sum(out, np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block0.attn"), n_coords=60, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_cw_sa(seed: int) -> GradcheckReport:
    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[1]

    def fn():
        out = attn_mod.cw_sa(x, block.attn.base, wp=block.attn.wp)
        return _probe_sum(out, np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block1.attn"), n_coords=60, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_as_sa(seed: int) -> GradcheckReport:
    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[0]

    def fn():
        return _probe_sum(aim_mod.as_sa(x, block.attn), np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block0.attn"), n_coords=80, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_ac_sa(seed: int) -> GradcheckReport:
    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[1]

    def fn():
        return _probe_sum(aim_mod.ac_sa(x, block.attn), np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block1.attn"), n_coords=80, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_sgfn(seed: int) -> GradcheckReport:
    from .model import sgfn

    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[0]

    def fn():
        return _probe_sum(sgfn(x, block.sgfn), np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block0.sgfn"), n_coords=60, seed=seed,
                     threshold=COMPOSITE_TOL)


def _check_datb(seed: int) -> GradcheckReport:
    from .model import datb_forward

    model, x, _ = _block_scenario(seed)
    block = model.groups[0].blocks[0]

    def fn():
        return _probe_sum(datb_forward(x, block), np.random.default_rng(seed + 1))

    return gradcheck(fn, _subset(model, "group0.block0"), n_coords=80, seed=seed,
                     threshold=COMPOSITE_TOL)


def check_tiny_model(seed: int = 0, n_coords: int = 100) -> GradcheckReport:
    """Full tiny-model L1 loss against central differences."""
    cfg = ModelConfig(n_groups=1, n_pairs=1, channels=16, heads=2, window=(4, 4),
                      sgfn_expansion=2, scale=2)
    model = set_dtype(build_model(cfg, rng_seed=seed), np.float64)
    rng = np.random.default_rng(seed + 7)
    for _, p in named_params(model):
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 4, 4)))
    target_data = rng.uniform(0.0, 1.0, size=(1, 3, 8, 8))
    params = named_params(model)

    # Keep the L1 kink away from the finite-difference step.
    from .tensor import no_grad
    with no_grad():
        pred = dat_forward(model, x).data
    close = np.abs(pred - target_data) < 1e-3
    target_data = np.where(close, target_data + 2e-3, target_data)
    target = Tensor(target_data)

    def fn():
        return l1_loss(dat_forward(model, x), target)

    return gradcheck(fn, params, n_coords=n_coords, seed=seed, threshold=COMPOSITE_TOL)


GRADCHECK_TARGETS = {
    "matmul": _check_matmul,
    "linear": _check_linear,
    "conv2d": lambda seed: _conv_scenario(seed, groups=1),
    "conv2d-depthwise": lambda seed: _conv_scenario(seed, groups=4),
    "layernorm": _check_layernorm,
    "softmax": _check_softmax,
    "gelu": lambda seed: _pointwise_scenario(seed, gelu),
    "sigmoid": lambda seed: _pointwise_scenario(seed, sigmoid),
    "elementwise": _check_elementwise,
    "concat-split": _check_concat_split,
    "roll": _check_roll,
    "pooling": _check_pooling,
    "pixel-shuffle": _check_pixel_shuffle,
    "pad-crop": _check_pad_crop,
    "rel-pos-bias": _check_rel_pos_bias,
    "sw-sa": _check_sw_sa,
    "shifted-sw-sa": _check_shifted_sw_sa,
    "cw-sa": _check_cw_sa,
    "as-sa": _check_as_sa,
    "ac-sa": _check_ac_sa,
    "sgfn": _check_sgfn,
    "datb": _check_datb,
    "tiny-model": check_tiny_model,
}
