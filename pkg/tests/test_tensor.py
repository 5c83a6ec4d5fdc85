import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dat_sr.tensor import (ShapeError, Tensor, concat, cyclic_roll, matmul,
                           permute, reshape_view, split)


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape).astype(np.float32)


# -- reshape / permute ---------------------------------------------------------

def test_reshape_preserves_order():
    t = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 2, 2))
    out = reshape_view(t, (1, 4, 4))
    assert out.shape == (1, 4, 4)
    np.testing.assert_array_equal(out.data.ravel(), t.data.ravel())


def test_reshape_roundtrip_bitwise():
    t = Tensor(rand((2, 3, 5)))
    back = reshape_view(reshape_view(t, (30,)), (2, 3, 5))
    np.testing.assert_array_equal(back.data, t.data)


def test_reshape_extent_mismatch():
    with pytest.raises(ShapeError):
        reshape_view(Tensor(rand((2, 3))), (7,))


def test_permute_identity_bitwise():
    t = Tensor(rand((2, 3, 4)))
    np.testing.assert_array_equal(permute(t, (0, 1, 2)).data, t.data)


def test_permute_transpose():
    t = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    np.testing.assert_array_equal(permute(t, (1, 0)).data,
                                  np.array([[1.0, 3.0], [2.0, 4.0]], dtype=np.float32))


def test_permute_invalid():
    with pytest.raises(ShapeError):
        permute(Tensor(rand((2, 3))), (0, 0))


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(4))))
def test_permute_roundtrip(order):
    t = Tensor(rand((2, 3, 4, 5), seed=3))
    inverse = tuple(np.argsort(order))
    np.testing.assert_array_equal(permute(permute(t, order), inverse).data, t.data)


# -- matmul ---------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(rand((3, 3)))
    np.testing.assert_allclose(matmul(a, Tensor(np.eye(3, dtype=np.float32))).data,
                               a.data, rtol=1e-6)


def test_matmul_hand_example():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]], dtype=np.float32))
    np.testing.assert_array_equal(matmul(a, b).data,
                                  np.array([[19.0, 22.0], [43.0, 50.0]], dtype=np.float32))


def test_matmul_batched_equals_loop():
    a = Tensor(rand((4, 3, 5), seed=1))
    b = Tensor(rand((4, 5, 2), seed=2))
    out = matmul(a, b).data
    for i in range(4):
        expect = np.array([[sum(a.data[i, m, k] * b.data[i, k, n] for k in range(5))
                            for n in range(2)] for m in range(3)])
        np.testing.assert_allclose(out[i], expect, atol=1e-5)


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(rand((2, 3))), Tensor(rand((4, 2))))


def test_matmul_identity_distributivity():
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(-1, 1, (4, 4)).astype(np.float32))
    b = Tensor(rng.uniform(-1, 1, (4, 4)).astype(np.float32))
    c = Tensor(rng.uniform(-1, 1, (4, 4)).astype(np.float32))
    left = matmul(a, b + c).data
    right = (matmul(a, b) + matmul(a, c)).data
    np.testing.assert_allclose(left, right, rtol=1e-5, atol=1e-6)


# -- elementwise ------------------------------------------------------------------

def test_mul_by_ones_and_add_zero():
    a = Tensor(rand((3, 4)))
    np.testing.assert_array_equal((a * Tensor(np.ones((3, 4), np.float32))).data, a.data)
    np.testing.assert_array_equal((a + Tensor(np.zeros((3, 4), np.float32))).data, a.data)


def test_broadcast_channel_map_matches_loop():
    a = Tensor(rand((5, 4, 3), seed=6))  # [H,W,C]
    cmap = Tensor(rand((1, 1, 3), seed=7))
    out = (a * cmap).data
    expect = np.empty_like(out)
    for y in range(5):
        for x in range(4):
            for c in range(3):
                expect[y, x, c] = a.data[y, x, c] * cmap.data[0, 0, c]
    np.testing.assert_array_equal(out, expect)


def test_broadcast_spatial_map_matches_loop():
    a = Tensor(rand((5, 4, 3), seed=8))
    smap = Tensor(rand((5, 4, 1), seed=9))
    out = (a * smap).data
    for c in range(3):
        np.testing.assert_array_equal(out[:, :, c], a.data[:, :, c] * smap.data[:, :, 0])


def test_broadcast_requires_equal_rank():
    with pytest.raises(ShapeError):
        Tensor(rand((2, 3))) + Tensor(rand((3,)))


def test_broadcast_rejects_mismatched_extent():
    with pytest.raises(ShapeError):
        Tensor(rand((2, 3))) * Tensor(rand((2, 4)))


# -- concat / split ----------------------------------------------------------------

def test_split_concat_roundtrip():
    t = Tensor(rand((2, 4, 3)))
    parts = split(t, axis=1, sizes=[2, 2])
    np.testing.assert_array_equal(concat(parts, axis=1).data, t.data)


def test_concat_single():
    t = Tensor(rand((2, 3)))
    np.testing.assert_array_equal(concat([t], axis=0).data, t.data)


def test_head_split_matches_slicing():
    t = Tensor(rand((2, 5, 6), seed=4))
    parts = split(t, axis=2, sizes=[3, 3])
    np.testing.assert_array_equal(parts[0].data, t.data[:, :, :3])
    np.testing.assert_array_equal(parts[1].data, t.data[:, :, 3:])


def test_split_bad_sizes():
    with pytest.raises(ShapeError):
        split(Tensor(rand((2, 4))), axis=1, sizes=[3, 2])


def test_concat_extent_mismatch():
    with pytest.raises(ShapeError):
        concat([Tensor(rand((2, 3))), Tensor(rand((3, 3)))], axis=1)


# -- cyclic roll --------------------------------------------------------------------

def test_roll_zero_identity():
    t = Tensor(rand((2, 3, 4, 5)))
    np.testing.assert_array_equal(cyclic_roll(t, (0, 0)).data, t.data)


def test_roll_definition():
    t = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    np.testing.assert_array_equal(cyclic_roll(t, (1, 1)).data,
                                  np.array([[4.0, 3.0], [2.0, 1.0]], dtype=np.float32))


@settings(max_examples=20, deadline=None)
@given(st.integers(-6, 6), st.integers(-6, 6))
def test_roll_roundtrip(dy, dx):
    t = Tensor(rand((2, 3, 4, 5), seed=11))
    back = cyclic_roll(cyclic_roll(t, (dy, dx)), (-dy, -dx))
    np.testing.assert_array_equal(back.data, t.data)


# -- autodiff mechanics ---------------------------------------------------------------

def test_sum_gradient_is_ones():
    t = Tensor(rand((3, 4)), requires_grad=True)
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones((3, 4), np.float32))


def test_fanout_accumulates():
    t = Tensor(rand((3,)), requires_grad=True)
    (t + t).sum().backward()
    np.testing.assert_array_equal(t.grad, 2 * np.ones(3, np.float32))


def test_backward_without_graph_raises():
    from dat_sr.tensor import GraphError
    with pytest.raises(GraphError):
        Tensor(rand((2,))).backward()


# -- robustness fuzz --------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.integers(0, 2 ** 31 - 1))
def test_no_nan_inf_from_finite_inputs(lo, hi, seed):
    from dat_sr.ops import LayerNormParams, layernorm, softmax

    lo, hi = min(lo, hi), max(lo, hi) + 1e-3
    x = Tensor(np.random.default_rng(seed).uniform(lo, hi, (1, 4, 2, 2)).astype(np.float32))
    soft = softmax(x, axis=1)
    assert np.isfinite(soft.data).all()
    p = LayerNormParams(gamma=Tensor(np.ones(4, np.float32)), beta=Tensor(np.zeros(4, np.float32)))
    assert np.isfinite(layernorm(x, p).data).all()
