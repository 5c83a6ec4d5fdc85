"""Training-side machinery: L1 loss, Adam, finite-difference gradient checks,
dihedral augmentation, and a single-pair overfitting loop for tiny models.

Gradient checking runs in float64 with central differences (h = 1e-4);
float32 checking is deliberately unsupported because deep compositions
condition too poorly for a meaningful threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .imaging import dihedral_apply, resize_array
from .model import DatModel, dat_forward, named_params, set_dtype
from .tensor import ConfigError, ShapeError, Tensor, zero_grads


class CheckFailure(RuntimeError):
    """A verification run (gradcheck, overfit) failed its contract."""


class TrainingDiverged(CheckFailure):
    """Loss became non-finite during optimization."""


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error."""
    if pred.shape != target.shape:
        raise ShapeError(f"loss operands differ: {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


def adam_init(params: list[tuple[str, Tensor]]) -> AdamState:
    state = AdamState()
    for name, p in params:
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: list[tuple[str, Tensor]], state: AdamState, lr: float) -> None:
    """One update from the gradients currently stored on the parameters.

    Parameters are mutated in place; this is the optimizer's single-writer path.
    """
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - (lr * update).astype(p.dtype, copy=False)


MILESTONE_FRACTIONS = (0.5, 0.8, 0.9, 0.95)


def lr_at(step: int, total_steps: int, base_lr: float) -> float:
    """Base rate halved at the standard milestone fractions of the run."""
    passed = sum(step >= frac * total_steps for frac in MILESTONE_FRACTIONS)
    return base_lr * (0.5 ** passed)


# -- gradient checking --------------------------------------------------------


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    mean_rel_err: float
    coords: int


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]
    threshold: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def gradcheck(fn, params: list[tuple[str, Tensor]], n_coords: int = 100,
              seed: int = 0, h: float = 1e-4, threshold: float = 1e-4) -> GradcheckReport:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its graph from the current parameter data on every
    call and return a scalar.  ``n_coords`` coordinates are sampled without
    replacement across the concatenated parameter space.  Relative error is
    |a - n| / max(|a|, |n|, 1e-8); a non-finite analytic gradient is a hard
    failure naming the offending coordinate.
    """
    for name, p in params:
        if p.dtype != np.float64:
            raise ConfigError(f"gradcheck requires float64 parameters ({name} is {p.dtype})")
    tensors = [p for _, p in params]
    zero_grads(tensors)
    loss = fn()
    loss.backward()
    analytic: list[np.ndarray] = []
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g.ravel()))[0])
            raise CheckFailure(f"non-finite analytic gradient at {name}[{bad}]")
        analytic.append(g.ravel().copy())

    sizes = [p.size for _, p in params]
    total = int(np.sum(sizes))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)

    errors: dict[str, list[float]] = {name: [] for name, _ in params}
    for flat_index in np.sort(chosen):
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = int(flat_index - offsets[which])
        name, p = params[which]
        original = p.data.ravel()[local]
        p.data.ravel()[local] = original + h
        f_plus = fn().item()
        p.data.ravel()[local] = original - h
        f_minus = fn().item()
        p.data.ravel()[local] = original
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[which][local])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        errors[name].append(rel)

    entries = [
        GradcheckEntry(name=name, max_rel_err=max(errs), mean_rel_err=float(np.mean(errs)), coords=len(errs))
        for name, errs in errors.items() if errs
    ]
    return GradcheckReport(entries=entries, threshold=threshold)


def _tiny_gradcheck_config() -> ModelConfig:
    return ModelConfig(n_groups=1, n_pairs=1, channels=16, heads=2,
                       window=(4, 4), sgfn_expansion=2, scale=2)


def gradcheck_model(seed: int = 0, n_coords: int = 100) -> GradcheckReport:
    """Finite-difference check of the full tiny-model L1 training loss."""
    from .model import build_model  # local import keeps module load light

    model = set_dtype(build_model(_tiny_gradcheck_config(), rng_seed=seed), np.float64)
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 4, 4)))
    target = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 8, 8)))
    params = named_params(model)

    def fn() -> Tensor:
        return l1_loss(dat_forward(model, x), target)

    return gradcheck(fn, params, n_coords=n_coords, seed=seed, threshold=1e-4)


# -- augmentation -------------------------------------------------------------


def augment(pair: tuple[Tensor, Tensor], rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Apply one random dihedral-group transform to an aligned (LR, HR) pair."""
    lr, hr = pair
    if lr.ndim != 3 or hr.ndim != 3:
        raise ShapeError("augment expects [C,H,W] patches")
    ratio_h = hr.shape[1] / lr.shape[1]
    ratio_w = hr.shape[2] / lr.shape[2]
    if ratio_h != ratio_w or ratio_h != int(ratio_h):
        raise ShapeError(f"misaligned pair: LR {lr.shape} vs HR {hr.shape}")
    k = int(rng.integers(0, 8))
    return (
        Tensor(dihedral_apply(lr.data, k), name=lr.name),
        Tensor(dihedral_apply(hr.data, k), name=hr.name),
    )


# -- single-pair overfitting ---------------------------------------------------


def overfit(model: DatModel, hr_image: Tensor, scale: int, steps: int,
            lr: float = 2e-4) -> np.ndarray:
    """Adam/L1 loop on one (degraded LR, HR) pair; returns the loss trace.

    The LR input is produced by bicubic degradation of ``hr_image`` ([3,H,W],
    values in [0,1]).  Deterministic: no data augmentation, no randomness
    beyond the already-built model.  Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    if hr_image.ndim != 3 or hr_image.shape[0] != 3:
        raise ShapeError(f"expected an HR [3,H,W] tensor, got {hr_image.shape}")
    _, h, w = hr_image.shape
    if h % scale != 0 or w % scale != 0:
        raise ShapeError(f"HR extents {h}x{w} not divisible by scale {scale}")
    lr_data = resize_array(hr_image.data, h // scale, w // scale)
    x = Tensor(np.clip(lr_data, 0.0, 1.0).astype(np.float32)[None])
    target = Tensor(hr_image.data.astype(np.float32)[None])

    params = named_params(model)
    tensors = [p for _, p in params]
    state = adam_init(params)
    trace = np.empty(steps, dtype=np.float64)
    for step in range(steps):
        zero_grads(tensors)
        loss = l1_loss(dat_forward(model, x), target)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        loss.backward()
        adam_step(params, state, lr_at(step, steps, lr))
        trace[step] = value
    return trace
