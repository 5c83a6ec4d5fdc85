import numpy as np
import pytest

from dat_sr.config import PRESETS
from dat_sr.imaging import dihedral_apply, dihedral_invert
from dat_sr.model import build_model
from dat_sr.tensor import Tensor, _result
from dat_sr.train import (AdamState, CheckFailure, adam_init, adam_step, augment,
                          gradcheck, l1_loss, lr_at, overfit)


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32)


# -- L1 -------------------------------------------------------------------------

def test_l1_self_is_zero():
    x = Tensor(rand((2, 3, 4, 4)))
    assert l1_loss(x, Tensor(x.data.copy())).item() == 0.0


def test_l1_is_mean_absolute_error():
    a = Tensor(np.array([1.0, -2.0, 0.5], np.float32))
    b = Tensor(np.array([0.0, 1.0, 0.5], np.float32))
    assert abs(l1_loss(a, b).item() - (1.0 + 3.0 + 0.0) / 3.0) < 1e-7


def test_sigmoid_gradient_at_zero():
    from dat_sr.ops import sigmoid
    x = Tensor(np.zeros(1, np.float32), requires_grad=True)
    sigmoid(x).sum().backward()
    np.testing.assert_allclose(x.grad, 0.25, atol=1e-7)


# -- Adam ------------------------------------------------------------------------

def _constant_grad_param(value, grad):
    p = Tensor(np.full(4, value, np.float32), requires_grad=True)
    p.grad = np.full(4, grad, np.float32)
    return p


def test_first_adam_step_moves_by_lr_times_sign():
    for g in (3.0, -0.02, 100.0):
        p = _constant_grad_param(1.0, g)
        params = [("p", p)]
        adam_step(params, adam_init(params), lr=0.01)
        np.testing.assert_allclose(p.data, 1.0 - 0.01 * np.sign(g), atol=1e-6)


def test_adam_sign_update_invariant_to_gradient_scale():
    updates = []
    for scale in (1.0, 1000.0):
        p = _constant_grad_param(0.0, 0.5 * scale)
        params = [("p", p)]
        adam_step(params, adam_init(params), lr=0.1)
        updates.append(p.data.copy())
    np.testing.assert_allclose(updates[0], updates[1], atol=1e-6)


def test_adam_descends_absolute_value():
    w = Tensor(np.zeros(1, np.float32), requires_grad=True)
    params = [("w", w)]
    state = adam_init(params)
    losses = []
    for _ in range(10):
        w.grad = None
        loss = (w - 3.0).abs().mean()
        losses.append(loss.item())
        loss.backward()
        adam_step(params, state, lr=0.1)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_state_defaults():
    state = AdamState()
    assert (state.beta1, state.beta2, state.eps) == (0.9, 0.99, 1e-8)


def test_lr_milestone_halving():
    total = 400
    assert lr_at(0, total, 2e-4) == 2e-4
    assert lr_at(199, total, 2e-4) == 2e-4
    assert lr_at(200, total, 2e-4) == 1e-4
    assert lr_at(320, total, 2e-4) == 5e-5
    assert lr_at(360, total, 2e-4) == 2.5e-5
    assert lr_at(380, total, 2e-4) == 1.25e-5


# -- gradcheck machinery -----------------------------------------------------------

def test_gradcheck_negative_control_tanh_derivative():
    """A gelu with the tanh-approximation derivative must fail the check."""
    from scipy.special import erf

    def corrupted_gelu(t):
        cdf = 0.5 * (1.0 + erf(t.data / np.sqrt(2.0)))
        out = t.data * cdf

        def backward(g):
            # derivative of the tanh approximation, against the erf forward
            k = np.sqrt(2.0 / np.pi)
            inner = k * (t.data + 0.044715 * t.data ** 3)
            tanh = np.tanh(inner)
            d_inner = k * (1.0 + 3 * 0.044715 * t.data ** 2)
            wrong = 0.5 * (1.0 + tanh) + 0.5 * t.data * (1.0 - tanh ** 2) * d_inner
            t._accumulate(g * wrong)

        return _result(out, (t,), backward)

    x = Tensor(np.random.default_rng(0).standard_normal(16) * 1.5, requires_grad=True)
    probe = np.random.default_rng(1).standard_normal(16)

    def fn():
        return (corrupted_gelu(x) * Tensor(probe)).sum()

    report = gradcheck(fn, [("x", x)], n_coords=16, seed=0, threshold=1e-6)
    assert not report.passed
    assert report.max_rel_err > 1e-3


def test_gradcheck_requires_float64():
    x = Tensor(rand((3,)), requires_grad=True)
    with pytest.raises(Exception):
        gradcheck(lambda: x.sum(), [("x", x)])


def test_gradcheck_flags_nonfinite_gradient():
    x = Tensor(np.ones(3, np.float64), requires_grad=True)

    def bad_op(t):
        def backward(g):
            t._accumulate(g * np.array([1.0, np.inf, 1.0]))
        return _result(t.data * 2.0, (t,), backward)

    with pytest.raises(CheckFailure, match=r"x\[1\]"):
        gradcheck(lambda: bad_op(x).sum(), [("x", x)], n_coords=3)


# -- augmentation --------------------------------------------------------------------

class _FixedRng:
    def __init__(self, value):
        self.value = value

    def integers(self, lo, hi):
        return self.value


def test_augment_identity():
    lr = Tensor(rand((3, 4, 4), seed=1))
    hr = Tensor(rand((3, 8, 8), seed=2))
    out_lr, out_hr = augment((lr, hr), _FixedRng(0))
    np.testing.assert_array_equal(out_lr.data, lr.data)
    np.testing.assert_array_equal(out_hr.data, hr.data)


def test_rot90_four_times_is_identity():
    x = rand((3, 2, 5), seed=3)
    out = x
    for _ in range(4):
        out = dihedral_apply(out, 1)
    np.testing.assert_array_equal(out, x)


def test_dihedral_inverses():
    x = rand((3, 2, 5), seed=4)
    for k in range(8):
        np.testing.assert_array_equal(dihedral_invert(dihedral_apply(x, k), k), x)


def test_dihedral_relation_on_marker_patch():
    # rot180 commutes with the horizontal flip; verified against index arithmetic
    marker = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    a = dihedral_apply(dihedral_apply(marker, 2), 4)  # flip after rot180
    b = dihedral_apply(dihedral_apply(marker, 4), 2)  # rot180 after flip
    np.testing.assert_array_equal(a, b)
    h, w = 2, 3
    expect = np.empty_like(marker)
    for y in range(h):
        for x in range(w):
            expect[0, y, x] = marker[0, h - 1 - y, x]  # rot180 then flip = vertical flip
    np.testing.assert_array_equal(a, expect)


def test_augment_same_transform_both_patches():
    lr = Tensor(np.arange(12, dtype=np.float32).reshape(3, 2, 2))
    hr = Tensor(np.arange(48, dtype=np.float32).reshape(3, 4, 4))
    out_lr, out_hr = augment((lr, hr), _FixedRng(5))
    np.testing.assert_array_equal(out_lr.data, dihedral_apply(lr.data, 5))
    np.testing.assert_array_equal(out_hr.data, dihedral_apply(hr.data, 5))


def test_augment_rejects_misaligned_pair():
    with pytest.raises(Exception):
        augment((Tensor(rand((3, 4, 4))), Tensor(rand((3, 9, 8)))), _FixedRng(0))


def test_augment_covers_the_whole_group():
    lr = Tensor(np.arange(12, dtype=np.float32).reshape(3, 2, 2))
    hr = Tensor(np.arange(48, dtype=np.float32).reshape(3, 4, 4))
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        out_lr, _ = augment((lr, hr), rng)
        seen.add(out_lr.data.tobytes())
    assert len(seen) == 8


# -- overfit loop ------------------------------------------------------------------------

def _hr_patch(size=8):
    y, x = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.stack([x / size, y / size, (x + y) / (2 * size)]).astype(np.float32)
    return Tensor(img)


def test_zero_lr_trace_constant():
    model = build_model(PRESETS["tiny"], rng_seed=0)
    trace = overfit(model, _hr_patch(), scale=2, steps=5, lr=0.0)
    assert np.ptp(trace) == 0.0


def test_overfit_deterministic_across_runs():
    traces = []
    for _ in range(2):
        model = build_model(PRESETS["tiny"], rng_seed=3)
        traces.append(overfit(model, _hr_patch(), scale=2, steps=10, lr=2e-4))
    np.testing.assert_array_equal(traces[0], traces[1])


def test_overfit_requires_divisible_extents():
    model = build_model(PRESETS["tiny"], rng_seed=0)
    with pytest.raises(Exception):
        overfit(model, Tensor(rand((3, 9, 8))), scale=2, steps=1)
