"""Command-line entry point: ``addersr <command> ...``.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (AdderSRError, ConfigurationError, FormatError, NumericalError,
                     ParameterError, ShapeError)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def cmd_train(args) -> int:
    from .config import load_config
    from .models import build_tiny_vdsr
    from .training import build_dataset, train

    cfg = load_config(args.config)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    patches, val_pairs = build_dataset(cfg)
    model = build_tiny_vdsr(cfg.variant, cfg.depth, cfg.width, cfg.scale, cfg.seed,
                            shortcut=cfg.shortcut, power=cfg.power,
                            shortcut_gamma=cfg.shortcut_gamma)
    result = train(model, patches, cfg, val_pairs=val_pairs, checkpoint_path=out / "model.adsr",
                   progress=True)
    result.history.write_csv(out / "history.csv")
    h = result.history
    if h.epoch:
        print(f"trained {len(patches)} patches for {h.epoch[-1]} epochs: "
              f"loss {h.train_loss[-1]:.6g}, val PSNR {h.val_psnr[-1]:.3f} dB")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _luma_float(img) -> np.ndarray:
    from .data import rgb_to_y, ImagePlane
    if img.channels == 3:
        return rgb_to_y(ImagePlane(img.as_float(), "rgb")).samples
    return img.as_float()


def _run_luma(model, y255: np.ndarray) -> np.ndarray:
    from .models import forward
    from .tensor import Tensor
    out = forward(model, Tensor(y255[None, None] / 255.0), training=False).data[0, 0]
    return out * 255.0


def cmd_eval(args) -> int:
    from .data import bicubic_resize, mod_crop, read_pnm
    from .metrics import quality
    from .models import load_model

    model = load_model(args.ckpt)
    rows = []
    for path in sorted(Path(args.dir).iterdir()):
        if path.suffix.lower() not in (".pgm", ".ppm", ".pnm"):
            continue
        hr = mod_crop(_luma_float(read_pnm(path)), args.scale)
        lr_up = bicubic_resize(bicubic_resize(hr, Fraction(1, args.scale)), args.scale)
        sr = np.clip(_run_luma(model, lr_up), 0.0, 255.0)
        q_bic = quality(np.clip(lr_up, 0, 255), hr, 255.0, args.scale)
        q_sr = quality(sr, hr, 255.0, args.scale)
        rows.append((q_bic, q_sr))
        print(f"{path.name:<24} bicubic {q_bic}  model {q_sr}")
    if not rows:
        raise FormatError(f"no .pgm/.ppm images in {args.dir}")
    mb = np.mean([r[0].psnr_db for r in rows]), np.mean([r[0].ssim for r in rows])
    ms = np.mean([r[1].psnr_db for r in rows]), np.mean([r[1].ssim for r in rows])
    print(f"{'mean':<24} bicubic {mb[0]:.2f}/{mb[1]:.4f}  model {ms[0]:.2f}/{ms[1]:.4f}")
    return EXIT_OK


def upscale_image(model, img, scale: int):
    """Model on luma, bicubic on chroma; returns an 8-bit ImagePlane ``scale`` times larger."""
    from .data import ImagePlane, bicubic_resize, rgb_to_ycbcr, ycbcr_to_rgb
    up = bicubic_resize(img.as_float(), scale)
    if img.channels == 1:
        return ImagePlane(_run_luma(model, up), "gray").to_uint8()
    ycc = rgb_to_ycbcr(up)
    ycc[..., 0] = _run_luma(model, ycc[..., 0])
    return ImagePlane(ycbcr_to_rgb(ycc), "rgb").to_uint8()


def cmd_upscale(args) -> int:
    from .data import read_pnm, write_pnm
    from .models import load_model

    model = load_model(args.ckpt)
    out = upscale_image(model, read_pnm(args.inp), args.scale)
    write_pnm(args.out, out)
    print(f"wrote {args.out} ({out.width}x{out.height})")
    return EXIT_OK


def cmd_energy(args) -> int:
    from .energy import LayerCount, count_ops, energy
    from .models import parse_spec

    if args.spec:
        spec = parse_spec(Path(args.spec).read_text())
        counts = count_ops(spec, args.height, args.width, include_overhead=not args.no_overhead)
    elif args.mul is not None and args.add is not None:
        counts = [LayerCount("given", "counts", int(round(args.mul * 1e9)), int(round(args.add * 1e9)))]
    else:
        raise _UsageError("energy: give --spec, or both --mul and --add (in G)")
    report = energy(counts, args.cnn_convention)
    print(report.format_table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .theorems import (nonpositivity_sweep, verify_highpass_impossibility,
                           verify_identity_impossibility)

    reports = [
        verify_identity_impossibility(args.d, args.c, args.trials, args.opt_steps, args.seed,
                                      restarts=args.restarts),
        verify_highpass_impossibility(args.d, args.trials, args.seed, c=args.c),
        nonpositivity_sweep(args.evaluations, args.seed),
    ]
    for r in reports:
        print(r.format())
    if args.out:
        Path(args.out).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    return EXIT_OK if all(r.verdict == "pass" for r in reports) else EXIT_NUMERIC


def cmd_dump(args) -> int:
    from .data import ImagePlane, bicubic_resize, read_pnm, write_pnm
    from .models import forward, load_model
    from .tensor import Tensor

    model = load_model(args.ckpt)
    if not 0 <= args.layer < len(model.layers):
        raise ParameterError(f"layer must be in [0, {len(model.layers) - 1}]")
    y = bicubic_resize(_luma_float(read_pnm(args.inp)), model.spec.scale) / 255.0
    trace = []
    forward(model, Tensor(y[None, None]), training=False, trace=trace)
    name, feat = trace[args.layer]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ch in range(feat.shape[1]):
        f = feat.data[0, ch]
        span = f.max() - f.min()
        norm = (f - f.min()) / span * 255.0 if span > 0 else np.zeros_like(f)
        write_pnm(out / f"{name}_ch{ch:03d}.pgm", ImagePlane(norm, "gray"))
    print(f"wrote {feat.shape[1]} feature maps of {name} to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="addersr", description="Adder-network super-resolution tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model from an INI config")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a directory of HR images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--dir", required=True)
    s.add_argument("--scale", type=int, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("upscale", help="super-resolve one PPM/PGM image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, required=True)
    s.set_defaults(func=cmd_upscale)

    s = sub.add_parser("energy", help="operation counts and energy of a network spec")
    s.add_argument("--spec")
    s.add_argument("--height", type=int, default=720)
    s.add_argument("--width", type=int, default=1280)
    s.add_argument("--cnn-convention", choices=("mul-plus-add", "mul-only"), default="mul-plus-add")
    s.add_argument("--no-overhead", action="store_true",
                   help="omit shortcut additions and power-activation multiplications")
    s.add_argument("--mul", type=float, help="raw multiplication count in G (instead of --spec)")
    s.add_argument("--add", type=float, help="raw addition count in G (instead of --spec)")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("verify-theorems", help="empirical identity / high-pass impossibility checks")
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--c", type=int, default=2)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--opt-steps", type=int, default=2000)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--evaluations", type=int, default=10 ** 6)
    s.add_argument("--out", help="write the JSON verdict file here")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("dump-features", help="write one layer's feature maps as PGM files")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--layer", type=int, required=True)
    s.add_argument("--out", default="features")
    s.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, ParameterError, OSError, AdderSRError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
