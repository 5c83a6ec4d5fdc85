#!/usr/bin/env python3
"""Print parameter counts and forward MACs for the shipped presets and the
structural study variants.

Usage: python scripts/complexity_report.py [--out-shape 3x512x512]
"""
import argparse

from dat_sr.config import PRESETS
from dat_sr.model import (ABLATION_VARIANTS, build_ablation_variant, build_model,
                          count_params, estimate_flops)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-shape", default="3x512x512")
    args = parser.parse_args()
    c, h, w = (int(p) for p in args.out_shape.lower().split("x"))

    print(f"preset complexity at output {c}x{h}x{w}")
    print(f"{'model':<14}{'params':>12}{'params (M)':>12}{'MACs (G)':>12}")
    for name in ("dat", "dat-s", "tiny"):
        model = build_model(PRESETS[name])
        params = count_params(model)
        scale = model.config.scale
        shape = (c, h - h % scale, w - w % scale)
        flops = estimate_flops(model, shape)
        print(f"{name:<14}{params:>12}{params / 1e6:>12.3f}{flops / 1e9:>12.2f}")

    print("\nstudy variants on the dat configuration")
    print(f"{'variant':<14}{'params':>12}{'params (M)':>12}")
    for variant in ABLATION_VARIANTS:
        params = count_params(build_ablation_variant(variant, PRESETS["dat"]))
        print(f"{variant:<14}{params:>12}{params / 1e6:>12.3f}")


if __name__ == "__main__":
    main()
