"""Image I/O, color conversion, bicubic resampling, Y-channel metrics, and
self-ensemble inference.

Conventions (the usual SR evaluation protocol):

* Y is BT.601 studio swing: (65.481 R + 128.553 G + 24.966 B + 16) / 255;
* metrics quantize Y to the 8-bit grid first and crop ``scale`` pixels per side;
* PSNR uses dynamic range 1.0 on [0,1] floats; identical images report inf;
* SSIM is the 11x11 Gaussian-window (sigma 1.5) form, K1=0.01, K2=0.03,
  averaged over valid (unpadded) windows;
* bicubic resampling uses the Keys kernel (a = -0.5), center-aligned
  coordinates, replicated edges, and kernel widening (antialias) on downscale.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image as PILImage

from .tensor import ShapeError, Tensor, no_grad


class IoError(Exception):
    """File problem, reported with the offending path."""


@dataclass
class Image:
    """[3,H,W] float pixels; values are clamped to [0,1] at I/O boundaries."""

    pixels: Tensor
    colorspace: str = "RGB"

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"image pixels must be [3,H,W], got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


# -- PNG I/O -------------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _read_ihdr(path: Path) -> tuple[int, int]:
    """Return (bit_depth, color_type) from the PNG header, before decoding."""
    try:
        with open(path, "rb") as handle:
            head = handle.read(33)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise IoError(f"{path}: not a PNG file")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def png_read(path) -> Image:
    """Load an 8-bit RGB PNG as float pixels in [0,1]."""
    path = Path(path)
    bit_depth, color_type = _read_ihdr(path)
    if bit_depth != 8:
        raise IoError(f"{path}: unsupported bit depth {bit_depth} (8-bit RGB required)")
    if color_type != 2:
        raise IoError(f"{path}: unsupported color type {color_type} (truecolor RGB required)")
    try:
        with PILImage.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    pixels = (rgb.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return Image(pixels=Tensor(np.ascontiguousarray(pixels)))


def png_write(path, img: Image) -> None:
    """Store as 8-bit RGB PNG; values are clamped and rounded to the grid."""
    path = Path(path)
    data = np.clip(img.pixels.data, 0.0, 1.0)
    rgb = np.round(data * 255.0).astype(np.uint8).transpose(1, 2, 0)
    try:
        PILImage.fromarray(rgb, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


# -- color ---------------------------------------------------------------------

_Y_COEFFS = np.array([65.481, 128.553, 24.966], dtype=np.float64)


def rgb_to_y(img: Image) -> Tensor:
    """BT.601 studio-swing luminance, [1,H,W] in [16/255, 235/255]."""
    rgb = img.pixels.data.astype(np.float64)
    y = (np.tensordot(_Y_COEFFS, rgb, axes=([0], [0])) + 16.0) / 255.0
    return Tensor(y[None].astype(np.float32))


def quantize8(arr: np.ndarray) -> np.ndarray:
    """Round onto the 8-bit grid in [0,1]."""
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0


# -- bicubic resampling ----------------------------------------------------------


def _keys_kernel(x: np.ndarray) -> np.ndarray:
    """Keys cubic with a = -0.5: W(0)=1, W(1)=W(2)=0, support [-2, 2]."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resample_weights(in_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices and normalized weights along one axis."""
    scale = out_len / in_len
    kscale = min(scale, 1.0)  # widen the kernel when downscaling
    kernel_width = 4.0 / kscale
    centers = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(centers - kernel_width / 2.0).astype(np.int64) + 1
    taps = int(math.ceil(kernel_width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = _keys_kernel((centers[:, None] - indices) * kscale)
    weights = weights / weights.sum(axis=1, keepdims=True)
    return np.clip(indices, 0, in_len - 1), weights


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of [..., H, W] data (float64 internally)."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target {out_h}x{out_w} must be positive")
    out = arr.astype(np.float64)
    for axis, out_len in ((-2, out_h), (-1, out_w)):
        in_len = out.shape[axis]
        if in_len == out_len:
            continue
        indices, weights = _resample_weights(in_len, out_len)
        moved = np.moveaxis(out, axis, -1)
        gathered = moved[..., indices]  # [..., out_len, taps]
        resampled = np.einsum("...ot,ot->...o", gathered, weights)
        out = np.moveaxis(resampled, -1, axis)
    return out


def bicubic_resize(img: Image, out_h: int, out_w: int) -> Image:
    data = resize_array(img.pixels.data, out_h, out_w)
    return Image(pixels=Tensor(data.astype(np.float32)), colorspace=img.colorspace)


# -- metrics ---------------------------------------------------------------------


def _metric_planes(a: Image, b: Image, crop: int) -> tuple[np.ndarray, np.ndarray]:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image extents differ: {a.pixels.shape} vs {b.pixels.shape}")
    h, w = a.height, a.width
    if crop < 0 or 2 * crop >= min(h, w):
        raise ShapeError(f"crop {crop} too large for {h}x{w}")
    ya = quantize8(rgb_to_y(a).data[0].astype(np.float64))
    yb = quantize8(rgb_to_y(b).data[0].astype(np.float64))
    if crop:
        ya = ya[crop:-crop, crop:-crop]
        yb = yb[crop:-crop, crop:-crop]
    return ya, yb


def psnr_y(a: Image, b: Image, crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB on the quantized Y plane; inf if equal."""
    ya, yb = _metric_planes(a, b, crop)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _filter_valid(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = sliding_window_view(plane, window.shape)
    return np.einsum("hwij,ij->hw", views, window, optimize=True)


def ssim_y(a: Image, b: Image, crop: int = 0) -> float:
    """Structural similarity on the quantized Y plane, valid windows only."""
    ya, yb = _metric_planes(a, b, crop)
    if min(ya.shape) < _SSIM_WINDOW:
        raise ShapeError(f"image too small for an {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")
    window = _gaussian_window()
    mu_a = _filter_valid(ya, window)
    mu_b = _filter_valid(yb, window)
    ex_aa = _filter_valid(ya * ya, window)
    ex_bb = _filter_valid(yb * yb, window)
    ex_ab = _filter_valid(ya * yb, window)
    var_a = ex_aa - mu_a * mu_a
    var_b = ex_bb - mu_b * mu_b
    cov = ex_ab - mu_a * mu_b
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(ssim_map.mean())


# -- dihedral transforms and self-ensemble ----------------------------------------


def dihedral_apply(arr: np.ndarray, k: int) -> np.ndarray:
    """Transform k in 0..7: horizontal flip if k >= 4, then rotate by 90*(k%4)."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index {k} out of range")
    out = np.flip(arr, axis=-1) if k >= 4 else arr
    return np.ascontiguousarray(np.rot90(out, k % 4, axes=(-2, -1)))


def dihedral_invert(arr: np.ndarray, k: int) -> np.ndarray:
    """Undo :func:`dihedral_apply` with the same index."""
    out = np.rot90(arr, -(k % 4), axes=(-2, -1))
    if k >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def infer_image(model, img: Image) -> Image:
    """Single forward pass, unclamped float output image."""
    from .model import dat_forward

    with no_grad():
        out = dat_forward(model, Tensor(img.pixels.data[None]))
    return Image(pixels=Tensor(out.data[0]))


def self_ensemble(model, img: Image) -> Image:
    """Average the model over the 8 dihedral transforms of the input."""
    from .model import dat_forward

    total: np.ndarray | None = None
    with no_grad():
        for k in range(8):
            variant = dihedral_apply(img.pixels.data, k)
            out = dat_forward(model, Tensor(np.ascontiguousarray(variant)[None])).data[0]
            restored = dihedral_invert(out, k)
            total = restored if total is None else total + restored
    return Image(pixels=Tensor((total / 8.0).astype(np.float32)))


# -- evaluation report -------------------------------------------------------------


def _format_metric(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


@dataclass
class EvalRow:
    image: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        lines = ["image,psnr_db,ssim"]
        for row in self.rows:
            lines.append(f"{row.image},{_format_metric(row.psnr_db)},{_format_metric(row.ssim)}")
        lines.append(f"mean,{_format_metric(self.mean_psnr_db)},{_format_metric(self.mean_ssim)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        def encode(value: float):
            return "inf" if math.isinf(value) else value

        payload = {
            "images": [
                {"image": r.image, "psnr_db": encode(r.psnr_db), "ssim": encode(r.ssim)}
                for r in self.rows
            ],
            "mean_psnr_db": encode(self.mean_psnr_db),
            "mean_ssim": encode(self.mean_ssim),
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
