import numpy as np
import pytest
from dataclasses import replace

from dat_sr.aim import ac_sa, as_sa, c_i, c_map, s_i, s_map
from dat_sr.ops import linear
from dat_sr.tensor import Tensor

from helpers import make_adaptive, make_aim, make_cwsa, make_swsa
from reference import (ac_sa_ref, as_sa_ref, c_map_ref, gelu_ref, s_map_ref,
                       sigmoid_ref)


def rand_image(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32))


def apply_wp(arr, wp):
    flat = arr.transpose(0, 2, 3, 1).astype(wp.weight.dtype)
    return linear(Tensor(flat), wp).data.transpose(0, 3, 1, 2)


# -- maps -----------------------------------------------------------------------

def test_smap_zero_weights_give_half():
    p = make_aim(c=4, zero=True)
    out = s_map(rand_image((1, 4, 3, 3)), p).data
    np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 0.5, np.float32))


def test_cmap_zero_weights_give_half():
    p = make_aim(c=4, zero=True)
    out = c_map(rand_image((1, 4, 3, 3)), p).data
    np.testing.assert_array_equal(out, np.full((1, 4, 1, 1), 0.5, np.float32))


def test_map_ranges_open_unit_interval():
    p = make_aim(c=4, seed=3)
    x = rand_image((2, 4, 5, 5), seed=4)
    for mapped in (s_map(x, p).data, c_map(x, p).data):
        assert (mapped > 0).all() and (mapped < 1).all()


def test_smap_matches_composition_oracle():
    p = make_aim(c=4, r1=2, seed=5)
    x = rand_image((1, 4, 2, 2), seed=6)
    np.testing.assert_allclose(s_map(x, p).data, s_map_ref(x.data, p), atol=1e-6)


def test_cmap_matches_composition_oracle():
    p = make_aim(c=4, r2=2, seed=7)
    x = rand_image((1, 4, 2, 2), seed=8)
    np.testing.assert_allclose(c_map(x, p).data, c_map_ref(x.data, p), atol=1e-6)


def test_cmap_invariant_to_spatial_permutation():
    p = make_aim(c=4, seed=9)
    x = rand_image((1, 4, 3, 3), seed=10)
    perm = np.random.default_rng(11).permutation(9)
    shuffled = x.data.reshape(1, 4, 9)[:, :, perm].reshape(1, 4, 3, 3)
    np.testing.assert_allclose(c_map(Tensor(shuffled), p).data, c_map(x, p).data, atol=1e-6)


# -- interactions ------------------------------------------------------------------

def test_interactions_zero_operand():
    p = make_aim(c=4, seed=12)
    zero = Tensor(np.zeros((1, 4, 3, 3), np.float32))
    b = rand_image((1, 4, 3, 3), seed=13)
    assert np.all(s_i(zero, b, p).data == 0)
    assert np.all(c_i(zero, b, p).data == 0)


def test_interactions_with_zero_maps_halve():
    p = make_aim(c=4, zero=True)
    a = rand_image((1, 4, 3, 3), seed=14)
    b = rand_image((1, 4, 3, 3), seed=15)
    np.testing.assert_allclose(s_i(a, b, p).data, a.data / 2, atol=1e-7)
    np.testing.assert_allclose(c_i(a, b, p).data, a.data / 2, atol=1e-7)


def test_interactions_match_broadcast_loop():
    p = make_aim(c=4, seed=16)
    a = rand_image((1, 4, 3, 3), seed=17)
    b = rand_image((1, 4, 3, 3), seed=18)
    smap = s_map_ref(b.data, p)
    cmap = c_map_ref(b.data, p)
    expect_s = np.empty_like(a.data, dtype=np.float64)
    expect_c = np.empty_like(a.data, dtype=np.float64)
    for c in range(4):
        for y in range(3):
            for x in range(3):
                expect_s[0, c, y, x] = a.data[0, c, y, x] * smap[0, 0, y, x]
                expect_c[0, c, y, x] = a.data[0, c, y, x] * cmap[0, c, 0, 0]
    np.testing.assert_allclose(s_i(a, b, p).data, expect_s, atol=1e-6)
    np.testing.assert_allclose(c_i(a, b, p).data, expect_c, atol=1e-6)


# -- adaptive spatial attention -------------------------------------------------------

def test_as_sa_zero_aim_weights_halve_both_branches():
    base = make_swsa(c=4, heads=1, window=(2, 2), seed=19)
    p = make_adaptive(base, c=4, seed=19, zero_aim=True)
    x = rand_image((1, 4, 4, 4), seed=20)
    out = as_sa(x, p).data
    plain = replace(p, aim=None)
    simple_sum = as_sa(x, plain).data  # wp(Ys + Yw)
    np.testing.assert_allclose(out, simple_sum / 2, atol=1e-6)


def test_as_sa_zero_dw_reduces_to_gated_attention():
    base = make_swsa(c=4, heads=1, window=(2, 2), seed=21)
    p = make_adaptive(base, c=4, seed=21, zero_dw=True)
    x = rand_image((1, 4, 4, 4), seed=22)
    out = as_sa(x, p).data
    from dat_sr.attention import sw_sa
    y_s = sw_sa(x, base).data
    cmap = c_map_ref(np.zeros_like(x.data), p.aim)
    np.testing.assert_allclose(out, apply_wp(y_s * cmap, p.wp), atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_as_sa_matches_straight_line_oracle(seed):
    base = make_swsa(c=4, heads=1, window=(2, 2), seed=seed)
    p = make_adaptive(base, c=4, seed=seed)
    x = rand_image((1, 4, 4, 4), seed=seed + 30)
    np.testing.assert_allclose(as_sa(x, p).data, as_sa_ref(x.data, p), atol=1e-5)


def test_degenerate_aim_equals_simple_addition():
    from dat_sr.attention import sw_sa
    from dat_sr.ops import conv2d
    base = make_swsa(c=4, heads=2, window=(2, 2), seed=23)
    p = make_adaptive(base, c=4, seed=23, with_aim=False)
    x = rand_image((1, 4, 4, 4), seed=24)
    y_s = sw_sa(x, base).data
    value = linear(Tensor(x.data.transpose(0, 2, 3, 1)), base.wv).data.transpose(0, 3, 1, 2)
    y_w = conv2d(Tensor(value), p.dw).data
    np.testing.assert_allclose(as_sa(x, p).data, apply_wp(y_s + y_w, p.wp), atol=1e-6)


# -- adaptive channel attention ----------------------------------------------------------

def test_ac_sa_zero_aim_weights_halve_both_branches():
    base = make_cwsa(c=4, heads=2, seed=25)
    p = make_adaptive(base, c=4, seed=25, zero_aim=True)
    x = rand_image((1, 4, 3, 3), seed=26)
    plain = replace(p, aim=None)
    np.testing.assert_allclose(ac_sa(x, p).data, ac_sa(x, plain).data / 2, atol=1e-6)


def test_ac_sa_single_pixel_scalar_oracle():
    base = make_cwsa(c=3, heads=1, seed=27)
    p = make_adaptive(base, c=3, seed=27)
    x = rand_image((1, 3, 1, 1), seed=28)
    out = ac_sa(x, p).data

    vec = x.data[0, :, 0, 0].astype(np.float64)
    q = p.base.wq.weight.data.astype(np.float64) @ vec
    k = p.base.wk.weight.data.astype(np.float64) @ vec
    v = p.base.wv.weight.data.astype(np.float64) @ vec
    scores = np.outer(q, k) / np.exp(p.base.alpha.data[0])
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    attn = e / e.sum(axis=1, keepdims=True)
    y_c = v @ attn  # single pixel: V is [1, d], applied from the left
    y_w = (p.dw.weight.data[:, 0, 1, 1].astype(np.float64) * v) + p.dw.bias.data
    gate_in = p.aim.w1.weight.data[:, :, 0, 0].astype(np.float64) @ y_w + p.aim.w1.bias.data
    smap = sigmoid_ref(p.aim.w2.weight.data[:, :, 0, 0].astype(np.float64) @ gelu_ref(gate_in)
                       + p.aim.w2.bias.data)[0]
    cin = p.aim.w3.weight.data[:, :, 0, 0].astype(np.float64) @ y_c + p.aim.w3.bias.data
    cmap = sigmoid_ref(p.aim.w4.weight.data[:, :, 0, 0].astype(np.float64) @ gelu_ref(cin)
                       + p.aim.w4.bias.data)
    mixed = y_c * smap + y_w * cmap
    expect = p.wp.weight.data.astype(np.float64) @ mixed
    np.testing.assert_allclose(out[0, :, 0, 0], expect, atol=1e-5)


@pytest.mark.parametrize("seed", range(4))
def test_ac_sa_matches_straight_line_oracle(seed):
    base = make_cwsa(c=4, heads=2, seed=seed)
    p = make_adaptive(base, c=4, seed=seed)
    x = rand_image((1, 4, 3, 3), seed=seed + 40)
    np.testing.assert_allclose(ac_sa(x, p).data, ac_sa_ref(x.data, p), atol=1e-5)


# -- interaction direction asymmetry -------------------------------------------------------

def test_interaction_directions_are_swapped_between_mechanisms():
    """Make only the spatial map non-trivial: in AS-SA it modulates the conv
    branch, in AC-SA the attention branch."""
    c = 4
    x = rand_image((1, c, 4, 4), seed=41)

    def with_strong_smap():
        boosted = make_aim(c=c, seed=99, zero=True)
        boosted.w2.bias.data = np.full(1, 4.0, np.float32)   # s_map = sigmoid(4) ~ 0.982
        return boosted                                        # c_map stays at 0.5

    s_base = make_swsa(c=c, heads=1, window=(2, 2), seed=42)
    p_s = make_adaptive(s_base, c=c, seed=42, zero_aim=True)
    p_s_strong = replace(p_s, aim=with_strong_smap())

    from dat_sr.attention import sw_sa
    from dat_sr.ops import conv2d
    y_s = sw_sa(x, s_base).data
    value = linear(Tensor(x.data.transpose(0, 2, 3, 1)), s_base.wv).data.transpose(0, 3, 1, 2)
    y_w = conv2d(Tensor(value), p_s.dw).data
    smap_val = 1.0 / (1.0 + np.exp(-4.0))
    expect = apply_wp(y_s * 0.5 + y_w * smap_val, p_s_strong.wp)
    np.testing.assert_allclose(as_sa(x, p_s_strong).data, expect, atol=1e-5)

    c_base = make_cwsa(c=c, heads=2, seed=43)
    p_c = make_adaptive(c_base, c=c, seed=43, zero_aim=True)
    p_c_strong = replace(p_c, aim=with_strong_smap())
    from dat_sr.attention import cw_sa
    y_c = cw_sa(x, c_base).data
    value_c = linear(Tensor(x.data.transpose(0, 2, 3, 1)), c_base.wv).data.transpose(0, 3, 1, 2)
    y_w_c = conv2d(Tensor(value_c), p_c.dw).data
    expect_c = apply_wp(y_c * smap_val + y_w_c * 0.5, p_c_strong.wp)
    np.testing.assert_allclose(ac_sa(x, p_c_strong).data, expect_c, atol=1e-5)
