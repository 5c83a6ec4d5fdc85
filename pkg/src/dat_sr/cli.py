"""Command-line surface.

Subcommands: infer, evaluate, params, flops, gradcheck, overfit,
ablation-build.  Exit codes: 0 success, 1 usage, 2 I/O, 3 validation
(config/shape/weight mismatch), 4 check failure (gradcheck/overfit).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checks import GRADCHECK_TARGETS
from .config import resolve_config
from .imaging import (EvalReport, EvalRow, Image, IoError, bicubic_resize,
                      infer_image, png_read, png_write, psnr_y, quantize8,
                      self_ensemble, ssim_y)
from .model import build_ablation_variant, build_model, count_params, estimate_flops
from .tensor import ConfigError, ShapeError, Tensor
from .train import CheckFailure, overfit
from .weights import WeightFormatError, WeightMismatchError, load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_CHECK = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dat-sr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    infer = sub.add_parser("infer", help="super-resolve one PNG")
    infer.add_argument("--config", required=True, help="preset name or config file")
    infer.add_argument("--weights", required=True)
    infer.add_argument("--in", dest="input", required=True)
    infer.add_argument("--out", dest="output", required=True)
    infer.add_argument("--self-ensemble", action="store_true")

    evaluate = sub.add_parser("evaluate", help="PSNR/SSIM over a directory")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--weights", required=True)
    evaluate.add_argument("--hr-dir", required=True)
    evaluate.add_argument("--lr-dir")
    evaluate.add_argument("--degrade", action="store_true",
                          help="generate LR inputs by bicubic degradation")
    evaluate.add_argument("--scale", type=int, required=True)
    evaluate.add_argument("--report", required=True, help="CSV output path")
    evaluate.add_argument("--json", dest="json_path", help="optional JSON report path")
    evaluate.add_argument("--self-ensemble", action="store_true")

    params = sub.add_parser("params", help="print the learnable parameter count")
    params.add_argument("--config", required=True)

    flops = sub.add_parser("flops", help="print the forward multiply-accumulate count")
    flops.add_argument("--config", required=True)
    flops.add_argument("--out-shape", default="3x512x512", help="CxHxW, e.g. 3x512x512")

    gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gradcheck.add_argument("--target", default="tiny-model",
                           choices=sorted(GRADCHECK_TARGETS) + ["all"])
    gradcheck.add_argument("--seed", type=int, default=0)

    ofit = sub.add_parser("overfit", help="train a tiny model on one image pair")
    ofit.add_argument("--config", default="tiny")
    ofit.add_argument("--hr", required=True, help="HR PNG to fit")
    ofit.add_argument("--steps", type=int, default=400)
    ofit.add_argument("--lr", type=float, default=2e-4)
    ofit.add_argument("--out-weights", required=True)
    ofit.add_argument("--seed", type=int, default=0)

    ablation = sub.add_parser("ablation-build", help="build a study variant, print params")
    ablation.add_argument("--variant", required=True)
    ablation.add_argument("--config", required=True)

    return parser


def _parse_out_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"--out-shape must look like 3x512x512, got {text!r}")
    c, h, w = (int(p) for p in parts)
    return c, h, w


def _cmd_infer(args) -> int:
    cfg = resolve_config(args.config)
    model = build_model(cfg)
    load_weights(model, args.weights)
    img = png_read(args.input)
    out = self_ensemble(model, img) if args.self_ensemble else infer_image(model, img)
    png_write(args.output, out)
    print(f"wrote {args.output} ({out.width}x{out.height})")
    return EXIT_OK


def _crop_to_multiple(img: Image, scale: int) -> Image:
    h = (img.height // scale) * scale
    w = (img.width // scale) * scale
    if h == img.height and w == img.width:
        return img
    return Image(pixels=Tensor(np.ascontiguousarray(img.pixels.data[:, :h, :w])))


def _cmd_evaluate(args) -> int:
    cfg = resolve_config(args.config)
    if args.scale != cfg.scale:
        raise ConfigError(f"--scale {args.scale} does not match model scale {cfg.scale}")
    if bool(args.lr_dir) == bool(args.degrade):
        raise UsageError("evaluate needs exactly one of --lr-dir or --degrade")
    model = build_model(cfg)
    load_weights(model, args.weights)
    hr_dir = Path(args.hr_dir)
    names = sorted(p.name for p in hr_dir.glob("*.png"))
    if not names:
        raise IoError(f"{hr_dir}: no PNG files found")
    report = EvalReport(config={
        "config": args.config, "weights": str(args.weights), "scale": args.scale,
        "degrade": bool(args.degrade), "self_ensemble": bool(args.self_ensemble),
    })
    for name in names:
        hr = _crop_to_multiple(png_read(hr_dir / name), args.scale)
        if args.degrade:
            lr = bicubic_resize(hr, hr.height // args.scale, hr.width // args.scale)
            lr = Image(pixels=Tensor(quantize8(lr.pixels.data).astype(np.float32)))
        else:
            lr = png_read(Path(args.lr_dir) / name)
        sr = self_ensemble(model, lr) if args.self_ensemble else infer_image(model, lr)
        if (sr.height, sr.width) != (hr.height, hr.width):
            raise ShapeError(f"{name}: SR {sr.width}x{sr.height} vs HR {hr.width}x{hr.height}")
        report.rows.append(EvalRow(
            image=name,
            psnr_db=psnr_y(sr, hr, crop=args.scale),
            ssim=ssim_y(sr, hr, crop=args.scale),
        ))
    Path(args.report).write_text(report.to_csv())
    if args.json_path:
        Path(args.json_path).write_text(report.to_json())
    print(f"{len(report.rows)} images: mean PSNR {report.mean_psnr_db:.4f} dB, "
          f"mean SSIM {report.mean_ssim:.6f}")
    return EXIT_OK


def _cmd_params(args) -> int:
    print(count_params(build_model(resolve_config(args.config))))
    return EXIT_OK


def _cmd_flops(args) -> int:
    model = build_model(resolve_config(args.config))
    print(estimate_flops(model, _parse_out_shape(args.out_shape)))
    return EXIT_OK


def _run_gradcheck(name: str, seed: int) -> bool:
    report = GRADCHECK_TARGETS[name](seed)
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {name}: max rel err {report.max_rel_err:.3e} "
          f"(threshold {report.threshold:.0e}) {status}")
    return report.passed

def _cmd_gradcheck(args) -> int:
    names = sorted(GRADCHECK_TARGETS) if args.target == "all" else [args.target]
    ok = all([_run_gradcheck(name, args.seed) for name in names])
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_overfit(args) -> int:
    cfg = resolve_config(args.config)
    model = build_model(cfg, rng_seed=args.seed)
    hr = png_read(args.hr)
    trace = overfit(model, hr.pixels, cfg.scale, steps=args.steps, lr=args.lr)
    save_weights(model, args.out_weights)
    print(f"steps={args.steps} initial_l1={trace[0]:.6f} final_l1={trace[-1]:.6f} "
          f"ratio={trace[-1] / trace[0]:.4f}")
    print(f"wrote {args.out_weights}")
    return EXIT_OK


def _cmd_ablation(args) -> int:
    cfg = resolve_config(args.config)
    model = build_ablation_variant(args.variant, cfg)
    print(count_params(model))
    return EXIT_OK


_HANDLERS = {
    "infer": _cmd_infer,
    "evaluate": _cmd_evaluate,
    "params": _cmd_params,
    "flops": _cmd_flops,
    "gradcheck": _cmd_gradcheck,
    "overfit": _cmd_overfit,
    "ablation-build": _cmd_ablation,
}


def cli(argv: list[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoError, WeightFormatError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeError, WeightMismatchError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
