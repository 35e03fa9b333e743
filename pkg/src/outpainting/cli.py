"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .dataset import ConfigurationError, DatasetManifest, build_manifest, load_and_downsample, load_split
from .preprocess import OutpaintGeometry, build_mask
from .trainer import (CheckpointFormatError, TrainingSchedule, load_checkpoint, output_rmse,
                      overfit_single_image, run_training)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("outpainting")

PROFILES = {
    "paper-global": dict(t1=40950, t2=4550, t3=182000, alpha=0.0004, batch_size=16,
                         geometry=(128, 64, 32), local_disc=False),
    "paper-local": dict(t1=20000, t2=4000, t3=95000, alpha=0.0004, batch_size=16,
                        geometry=(128, 64, 32), local_disc=True),
    "desk": dict(t1=200, t2=50, t3=250, alpha=0.0004, batch_size=4, geometry=(32, 16, 8),
                 local_disc=False, eval_interval=50, checkpoint_interval=100),
}
SCHEDULE_KEYS = [f.name for f in fields(TrainingSchedule)]


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    schedule: TrainingSchedule
    geometry: OutpaintGeometry
    dilations: Tuple[int, int, int] = (2, 4, 8)
    local_disc: bool = False
    manifest: Optional[str] = None
    out: str = "runs/latest"
    profile: Optional[str] = None

    def to_json(self) -> str:
        data = asdict(self)
        data["dilations"] = list(self.dilations)
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def parse_dilations(text) -> Tuple[int, int, int]:
    values = [int(v) for v in (text.split(",") if isinstance(text, str) else text)]
    if len(values) != 3 or min(values) < 1:
        raise UsageError(f"--dilations needs three positive integers, got {text!r}")
    return tuple(values)


def parse_switch(value) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("on", "true", "1"):
        return True
    if value in ("off", "false", "0"):
        return False
    raise UsageError(f"expected on/off, got {value!r}")


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc


def resolve_config(args) -> RunConfig:
    """Merge profile defaults, then the config file, then explicit flags."""
    merged = {}
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    profile = getattr(args, "profile", None) or file_values.get("profile")
    if profile is not None:
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        merged.update(PROFILES[profile])
    merged.update(file_values)
    for key in SCHEDULE_KEYS + ["dilations", "local_disc", "manifest", "out"]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    unknown = set(merged) - set(SCHEDULE_KEYS) - {"dilations", "local_disc", "manifest", "out",
                                                  "profile", "geometry"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in ("t1", "t2", "t3") if k not in merged]
    if missing:
        raise UsageError(f"schedule incomplete (missing {missing}); pass --profile or a config file")
    try:
        schedule = TrainingSchedule(**{k: merged[k] for k in SCHEDULE_KEYS if k in merged})
        geometry = merged.get("geometry", (128, 64, 32))
        geometry = OutpaintGeometry(**geometry) if isinstance(geometry, dict) else OutpaintGeometry(*geometry)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return RunConfig(schedule, geometry, parse_dilations(merged.get("dilations", (2, 4, 8))),
                     parse_switch(merged.get("local_disc", False)), merged.get("manifest"),
                     merged.get("out", "runs/latest"), profile)


def _load_checkpoint_or_usage(path):
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------- commands

def cmd_prepare_data(args) -> int:
    manifest = build_manifest(args.root, args.val_count, args.seed, (args.size, args.size))
    manifest.save(args.out)
    print(f"{len(manifest.train_paths)} train / {len(manifest.val_paths)} val "
          f"({len(manifest.skipped)} skipped) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    if not config.manifest:
        raise UsageError("train needs --manifest (or 'manifest' in the config file)")
    manifest = DatasetManifest.load(config.manifest)
    if tuple(manifest.target_size) != config.geometry.shape:
        raise UsageError(f"manifest images are {manifest.target_size} but the geometry is "
                         f"{config.geometry.shape}")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(config.to_json())
    state = run_training(manifest, config.schedule, out, config.geometry, config.dilations,
                         config.local_disc, resume=not args.no_resume,
                         stop_at=args.stop_at)
    print(f"trained {state.iteration} iterations -> {out}")
    return 0


def bundled_city_image() -> Path:
    return Path(str(resources.files("outpainting") / "data" / "city.png"))


def cmd_overfit_sanity(args) -> int:
    path = args.image or bundled_city_image()
    pixels = load_and_downsample(path, (args.size, args.size))
    report = overfit_single_image(pixels, args.iterations, seed=args.seed,
                                  dilations=parse_dilations(args.dilations or "2,4,8"))
    result = asdict(report)
    result["image"] = str(path)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "overfit_report.json").write_text(text + "\n")
    print(text)
    print(f"final masked RMSE {report.final_rmse:.3f} (mean-fill baseline {report.baseline_rmse:.3f})")
    return 0


def cmd_evaluate(args) -> int:
    state = _load_checkpoint_or_usage(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    if tuple(manifest.target_size) != state.geometry.shape:
        raise UsageError(f"manifest size {manifest.target_size} does not match checkpoint {state.geometry.shape}")
    mask = build_mask(state.geometry)
    rows = []
    for path, pixels in zip(manifest.val_paths, load_split(manifest.val_paths, manifest.target_size)):
        rows.append((path, output_rmse(state.generator, pixels, mask)))
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "rmse"])
        writer.writerows((p, repr(r)) for p, r in rows)
    mean = float(np.mean([r for _, r in rows])) if rows else float("nan")
    print(f"{len(rows)} images, mean RMSE {mean:.3f} -> {out}")
    return 0


def cmd_outpaint(args) -> int:
    from .outpaint import outpaint_once, outpaint_recursive, read_png, side_by_side, write_png

    state = _load_checkpoint_or_usage(args.checkpoint)
    image = read_png(args.image)
    if args.recursive:
        result = outpaint_recursive(state.generator, image, args.recursive, args.k or state.geometry.k,
                                    blend=args.blend)
    else:
        if image.shape[:2] != state.geometry.shape:
            raise UsageError(f"image is {image.shape[:2]}, model geometry is {state.geometry.shape}")
        truth = read_png(args.ground_truth) if args.ground_truth else None
        result = outpaint_once(state.generator, image, state.geometry, truth, blend=args.blend)
    write_png(args.out, result.output)
    print(f"wrote {args.out} ({result.output.shape[1]}x{result.output.shape[0]})")
    if result.rmse is not None:
        print(f"masked RMSE {result.rmse:.3f}")
    if args.compare:
        panels = [image, result.output] + ([truth] if not args.recursive and truth is not None else [])
        write_png(args.compare, side_by_side(*panels))
    return 0


# ---------------------------------------------------------------- parser

def _add_training_flags(p):
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--profile", help=f"named schedule: {', '.join(PROFILES)}")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--dilations", help="dilation rates of generator layers 4-6, e.g. 2,4,8")
    p.add_argument("--local-disc", dest="local_disc", choices=["on", "off"])
    p.add_argument("--t1", type=int)
    p.add_argument("--t2", type=int)
    p.add_argument("--t3", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--eval-interval", dest="eval_interval", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    p.add_argument("--no-resume", action="store_true", help="ignore checkpoints already in --out")
    p.add_argument("--stop-at", dest="stop_at", type=int, help="checkpoint and exit after this many iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="outpainting", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="split an image directory into a train/val manifest")
    p.add_argument("root")
    p.add_argument("--val-count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out", default="manifest.txt")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="three-phase GAN training")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("overfit-sanity", help="overfit the generator to a single image")
    p.add_argument("image", nargs="?", help="defaults to the bundled city image")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--dilations")
    p.add_argument("--out")
    p.set_defaults(func=cmd_overfit_sanity)

    p = sub.add_parser("evaluate", help="per-image masked RMSE over the validation split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="rmse.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("outpaint", help="outpaint one image, optionally recursively")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recursive", type=int, default=0, metavar="N")
    p.add_argument("--k", type=int, help="strip width for recursive mode (default: model geometry)")
    p.add_argument("--blend", choices=["strips", "center", "none"], default="strips")
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--compare", help="also write an input|output|truth comparison PNG")
    p.set_defaults(func=cmd_outpaint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
