"""Command-line front end: `defence run`, `defence synth`, `defence eval`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .pipeline import (ConfigError, PipelineConfig, SyntheticSceneSpec,
                       apply_config_values, evaluate, generate_scene,
                       parse_config_file, run_pipeline)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defence",
                                     description="Stereo image de-fencing")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="de-fence a stereo pair")
    run.add_argument("--left", required=True)
    run.add_argument("--right", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--config", default=None)
    run.add_argument("--debug-dir", default=None)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a single config field (repeatable)")

    synth = sub.add_parser("synth", help="generate a synthetic fenced scene")
    synth.add_argument("--spec", default=None, help="key = value scene spec file")
    synth.add_argument("--out-dir", required=True)
    synth.add_argument("--seed", type=int, default=None)

    ev = sub.add_parser("eval", help="region-restricted PSNR/MSE")
    ev.add_argument("--result", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--mask", required=True)
    return parser


def _cmd_run(args) -> int:
    cfg = PipelineConfig(left=args.left, right=args.right, out=args.out,
                         debug_dir=args.debug_dir)
    try:
        if args.config:
            if not Path(args.config).is_file():
                print(f"i/o error: config file not found: {args.config}")
                return EXIT_IO
            apply_config_values(cfg, parse_config_file(args.config))
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        apply_config_values(cfg, overrides)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    return run_pipeline(cfg)


_SPEC_FIELDS = {
    "width": int, "height": int, "wire_width": int, "cell_pitch": int,
    "orientation_deg": float, "fence_disparity": int,
    "background_disparity": int, "noise_sigma": float, "seed": int,
    "background_path": str, "fence_value": float,
}


def _cmd_synth(args) -> int:
    spec = SyntheticSceneSpec()
    try:
        if args.spec:
            if not Path(args.spec).is_file():
                print(f"i/o error: spec file not found: {args.spec}")
                return EXIT_IO
            for key, raw in parse_config_file(args.spec).items():
                if key not in _SPEC_FIELDS:
                    raise ConfigError(f"unknown scene field '{key}'")
                setattr(spec, key, _SPEC_FIELDS[key](raw))
        if args.seed is not None:
            spec.seed = args.seed
        scene = generate_scene(spec)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.save_image(out / "left.png", scene["left"])
        io.save_image(out / "right.png", scene["right"])
        io.save_image(out / "truth_background.png", scene["truth_background"])
        io.save_mask(out / "truth_fence_left.pgm", scene["truth_fence_left"])
        io.save_mask(out / "truth_fence_right.pgm", scene["truth_fence_right"])
    except OSError as exc:
        print(f"i/o error: {exc}")
        return EXIT_IO
    print(f"scene written to {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        result = io.load_image(args.result)
        truth = io.load_image(args.truth)
        mask = io.load_mask(args.mask)
    except io.IOError_ as exc:
        print(f"i/o error: {exc}")
        return EXIT_IO
    try:
        if result.ndim != truth.ndim:
            if result.ndim == 2:
                result = np.stack([result] * 3, axis=2)
            if truth.ndim == 2:
                truth = np.stack([truth] * 3, axis=2)
        metrics = evaluate(result, truth, mask)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    print(f"mse={metrics['mse']:.6e} psnr={metrics['psnr']:.2f}dB")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "synth":
        return _cmd_synth(args)
    return _cmd_eval(args)


if __name__ == "__main__":
    sys.exit(main())
