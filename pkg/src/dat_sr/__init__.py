"""Dual aggregation transformer for image super-resolution, on numpy.

Forward kernels, reverse-mode gradients, a toy trainer, bit-exact weight
serialization, bicubic degradation, and Y-channel PSNR/SSIM evaluation.
"""

from .tensor import (ConfigError, GraphError, ShapeError, Tensor, concat,
                     cyclic_roll, matmul, no_grad, permute, reshape_view, split)
from .config import PRESETS, ModelConfig, resolve_config
from .model import (DatModel, build_ablation_variant, build_model, count_params,
                    dat_forward, estimate_flops, named_params, set_dtype)

__all__ = [
    "ConfigError", "GraphError", "ShapeError", "Tensor", "concat", "cyclic_roll",
    "matmul", "no_grad", "permute", "reshape_view", "split",
    "PRESETS", "ModelConfig", "resolve_config",
    "DatModel", "build_ablation_variant", "build_model", "count_params",
    "dat_forward", "estimate_flops", "named_params", "set_dtype",
]

__version__ = "0.1.0"
