#!/usr/bin/env python3
"""Overfit the tiny model on one image crop and compare against bicubic.

Generates a structured synthetic HR crop (or takes --hr <png>), degrades it,
trains with Adam on the L1 loss, and reports PSNR of the trained model's
output against plain bicubic upscaling of the same input.

Usage: python scripts/overfit_demo.py [--steps 400] [--lr 2e-4] [--hr crop.png]
       [--save-dir out/]
"""
import argparse
from pathlib import Path

import numpy as np

from dat_sr.config import PRESETS
from dat_sr.imaging import (Image, bicubic_resize, infer_image, png_read,
                            png_write, psnr_y, quantize8)
from dat_sr.model import build_model
from dat_sr.tensor import Tensor
from dat_sr.train import overfit
from dat_sr.weights import save_weights


def synthetic_crop(size: int = 32) -> Image:
    y, x = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    r = 0.25 + 0.25 * np.sin(2 * np.pi * x / 16.0) * np.cos(2 * np.pi * y / 11.0) + x / 64.0
    g = y / 40.0 + 0.2
    b = 0.5 + 0.3 * np.sin(2 * np.pi * (x + y) / 13.0)
    img = np.stack([r, g, b]).astype(np.float32)
    img[:, 8:18, 12:22] = np.array([0.9, 0.1, 0.2], np.float32)[:, None, None]
    return Image(pixels=Tensor(quantize8(np.clip(img, 0, 1)).astype(np.float32)))


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--hr", help="HR PNG to fit (default: synthetic crop)")
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--lr", type=float, default=2e-4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--save-dir", default=None)
    args = parser.parse_args()

    hr = png_read(args.hr) if args.hr else synthetic_crop()
    cfg = PRESETS["tiny"]
    model = build_model(cfg, rng_seed=args.seed)

    trace = overfit(model, hr.pixels, cfg.scale, steps=args.steps, lr=args.lr)
    quarters = [trace[i * len(trace) // 4:(i + 1) * len(trace) // 4].mean() for i in range(4)]
    print(f"L1 {trace[0]:.4f} -> {trace[-1]:.4f} (ratio {trace[-1] / trace[0]:.3f})")
    print("quarter means:", " ".join(f"{q:.4f}" for q in quarters))

    lr_img = bicubic_resize(hr, hr.height // cfg.scale, hr.width // cfg.scale)
    lr_img = Image(pixels=Tensor(quantize8(np.clip(lr_img.pixels.data, 0, 1)).astype(np.float32)))
    sr = infer_image(model, lr_img)
    bicubic_up = bicubic_resize(lr_img, hr.height, hr.width)
    print(f"PSNR vs HR: trained {psnr_y(sr, hr, crop=cfg.scale):.2f} dB, "
          f"bicubic {psnr_y(bicubic_up, hr, crop=cfg.scale):.2f} dB")

    if args.save_dir:
        out = Path(args.save_dir)
        out.mkdir(parents=True, exist_ok=True)
        png_write(out / "hr.png", hr)
        png_write(out / "lr.png", lr_img)
        png_write(out / "sr.png", sr)
        save_weights(model, out / "tiny-overfit.datw")
        print(f"wrote hr/lr/sr PNGs and weights to {out}/")


if __name__ == "__main__":
    main()
