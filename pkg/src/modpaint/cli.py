"""Command line entry points.

Exit codes: 0 success, 1 usage or configuration problem, 2 verification
failure, 3 numerical failure at runtime (divergence, non-finite output).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import training, verify
from .config import ConfigError, RunConfig, load_config
from .dataset import ProceduralDataset
from .generator import Generator
from .maskgen import make_blob_silhouettes, sample_object_aware_mask
from .pngio import PngError, from_unit, read_png, to_unit, write_png
from .prng import Prng
from .tensor import Tensor, set_precision

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 means verification failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modpaint", description="Mask-aware image inpainting kit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[], help="train a model")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--steps", type=int, help="override training.steps")
    t.add_argument("--seed", type=int, help="override the run seed")

    s = sub.add_parser("sample-masks", help="draw masks over procedural scenes")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int, default=64)

    i = sub.add_parser("inpaint", help="fill the masked region of an image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--config", help="JSON run configuration (model shape)")
    i.add_argument("--image", required=True, help="input RGB PNG")
    i.add_argument("--mask", required=True, help="grayscale PNG, nonblack = hole")
    i.add_argument("--out", required=True, help="output PNG path")
    i.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="run the built-in verification checks")
    v.add_argument("--quiet", action="store_true", help="only report failures")

    d = sub.add_parser("dump-features", help="write per-scale feature maps as PNGs")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--config", help="JSON run configuration (model shape)")
    d.add_argument("--image", required=True)
    d.add_argument("--mask", required=True)
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--seed", type=int, default=0)
    return p


def _load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(path)


def _cmd_train(args) -> int:
    try:
        cfg = _load_run_config(args.config)
    except ConfigError as e:
        return _fail(str(e), EXIT_USAGE)
    if args.steps is not None:
        if args.steps < 0:
            return _fail("--steps must be >= 0", EXIT_USAGE)
        cfg.training.steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
    set_precision(cfg.precision)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=2)
        f.write("\n")
    try:
        result = training.train(args.out, cfg.generator, cfg.mask, cfg.training,
                                cfg.seed)
    except training.TrainingDiverged as e:
        return _fail(str(e), EXIT_NUMERIC)
    print(f"trained {result['steps']} steps; checkpoint {result['checkpoint']}")
    return EXIT_OK


def _cmd_sample_masks(args) -> int:
    if args.count <= 0:
        return _fail("--count must be positive", EXIT_USAGE)
    cfg = RunConfig()
    root = Prng(args.seed)
    dataset = ProceduralDataset(seed=int(root.substream("data").seed),
                                resolution=args.resolution)
    silhouettes = make_blob_silhouettes(seed=int(root.substream("sils").seed))
    rng = root.substream("masks")
    os.makedirs(args.out, exist_ok=True)
    for n in range(args.count):
        _, inst = dataset.sample(n % len(dataset))
        mask, info = sample_object_aware_mask(rng, inst, cfg.mask, silhouettes)
        name = f"mask_{n:03d}.png"
        write_png(os.path.join(args.out, name),
                  (mask * np.uint8(255)).astype(np.uint8))
        print(f"{name} type={info['type']} area={info['area_frac']:.3f} "
              f"excluded={info['excluded']} fallback={info['fallback']}")
    return EXIT_OK


def _load_model(args):
    cfg = _load_run_config(args.config)
    set_precision(cfg.precision)
    gen = Generator(cfg.generator, Prng(cfg.seed).substream("generator"))
    training.load_generator(args.checkpoint, gen)
    return cfg, gen


def _load_image_and_mask(args, resolution: int):
    img = read_png(args.image)
    if img.ndim != 3:
        raise ValueError(f"{args.image}: expected an RGB image")
    if img.shape[:2] != (resolution, resolution):
        raise ValueError(
            f"{args.image}: size {img.shape[1]}x{img.shape[0]} does not match "
            f"the model resolution {resolution}"
        )
    mask_img = read_png(args.mask)
    if mask_img.ndim != 2:
        raise ValueError(f"{args.mask}: expected a grayscale mask")
    if mask_img.shape != (resolution, resolution):
        raise ValueError(
            f"{args.mask}: size {mask_img.shape[1]}x{mask_img.shape[0]} does not "
            f"match the model resolution {resolution}"
        )
    x = Tensor(to_unit(np.transpose(img, (2, 0, 1)))[None])
    m = Tensor((mask_img > 0).astype(np.float64)[None, None])
    return x, m


def _cmd_inpaint(args) -> int:
    try:
        cfg, gen = _load_model(args)
        x, m = _load_image_and_mask(args, cfg.generator.resolution)
    except (ConfigError, PngError, ValueError, OSError) as e:
        return _fail(str(e), EXIT_USAGE)
    rng = Prng(args.seed).substream("inpaint")
    z = Tensor(rng.substream("z").normal((1, cfg.generator.z_dim)))
    noise = gen.sample_noise(1, rng.substream("noise"))
    x_hat = gen.generate(x, m, z, noise_maps=noise).data
    if not np.isfinite(x_hat).all():
        return _fail("inpainting produced non-finite values", EXIT_NUMERIC)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_png(args.out, from_unit(np.transpose(x_hat[0], (1, 2, 0))))
    print(args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    lines = []

    def report(line):
        lines.append(line)
        if not args.quiet or line.startswith("FAIL"):
            print(line)

    ok = verify.run_verification(report)
    failed = sum(1 for line in lines if line.startswith("FAIL"))
    print(f"{len(lines) - failed}/{len(lines)} checks passed")
    return EXIT_OK if ok else EXIT_VERIFY


def _feature_to_gray(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.full(arr.shape, 128, dtype=np.uint8)
    return np.round((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _cmd_dump_features(args) -> int:
    try:
        cfg, gen = _load_model(args)
        x, m = _load_image_and_mask(args, cfg.generator.resolution)
    except (ConfigError, PngError, ValueError, OSError) as e:
        return _fail(str(e), EXIT_USAGE)
    rng = Prng(args.seed).substream("inpaint")
    z = Tensor(rng.substream("z").normal((1, cfg.generator.z_dim)))
    noise = gen.sample_noise(1, rng.substream("noise"))
    maps = gen.dump_features(x, m, z, noise_maps=noise)
    bad = [n for n, a in maps.items() if not np.isfinite(a).all()]
    if bad:
        return _fail(f"non-finite feature maps: {', '.join(sorted(bad))}",
                     EXIT_NUMERIC)
    os.makedirs(args.out, exist_ok=True)
    for name in sorted(maps):
        path = os.path.join(args.out, f"{name}.png")
        write_png(path, _feature_to_gray(maps[name]))
        print(path)
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "sample-masks": _cmd_sample_masks,
    "inpaint": _cmd_inpaint,
    "verify": _cmd_verify,
    "dump-features": _cmd_dump_features,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
