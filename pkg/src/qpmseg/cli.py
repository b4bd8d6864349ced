"""Command line entry point.

Examples:
    qpmseg segment images/ --pixel-size-um 0.5 --out results/ --workers 4 --overlays
    qpmseg phantom generate --out phantoms/ --n-scenes 20 --seed 1
    qpmseg phantom evaluate phantoms/ --out report.json
    qpmseg phantom bench --n-scenes 20 --workers 1

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 degenerate threshold, 4 no loadable images.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .core import Config
from .export import write_features_csv, write_features_jsonl
from .features import SCORE_DEFINITIONS
from .fileio import Calibration
from .overlay import render_overlay
from .phantom import (PhantomParams, PhantomScene, benchmark, evaluate_run,
                      generate_measurement, OvercrowdedError)
from .pipeline import NoImagesError, RunResult, run_images, run_pipeline
from .stats import DegenerateThresholdError, write_stats_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_NO_IMAGES = 4

logger = logging.getLogger("qpmseg")


class ConfigError(Exception):
    pass


def _load_config(path: str | None, overrides: dict) -> Config:
    base = Config()
    try:
        if path:
            try:
                values = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError(f"config {path} must hold a JSON object")
            base = Config.from_mapping(values)
        base = base.with_env()
        if overrides:
            base = Config.from_mapping(overrides, base)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return base


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with configuration fields")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--fallback-threshold", type=float, default=None,
                   help="cell threshold (rad) to use when every background is zero")
    p.add_argument("--no-plausibility", action="store_true",
                   help="accept every candidate without plausibility checks")


def _overrides(args) -> dict:
    out = {}
    if args.fallback_threshold is not None:
        out["fallback_threshold"] = args.fallback_threshold
    if args.no_plausibility:
        out["plausibility_checks"] = False
    return out


def _setup_logging(verbose: bool, logfile: Path | None = None) -> None:
    root = logging.getLogger("qpmseg")
    for h in list(root.handlers):
        h.close()
        root.removeHandler(h)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def write_outputs(result: RunResult, out: Path, overlays: bool, stats_dump: bool,
                  calibration: Calibration | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_features_csv(out / "features.csv", result.records)
    write_features_jsonl(out / "features.jsonl", result.records)
    (out / "score_definitions.json").write_text(json.dumps(SCORE_DEFINITIONS, indent=2) + "\n")
    result.manifest.write(out / "manifest.json")
    if stats_dump:
        write_stats_csv(out / "stats.csv", result.stats)
    if overlays:
        from .fileio import load_image
        odir = out / "overlays"
        odir.mkdir(exist_ok=True)
        by_image = result.cells_by_image()
        for src in result.manifest.inputs:
            if isinstance(src, str) and Path(src).exists():
                img = load_image(src, calibration)
            else:
                continue
            cells = by_image.get(img.id, [])
            render_overlay(odir / f"{img.id}.png", img, [c.region for c in cells],
                           [c.nucleus_region for c in cells],
                           [c.features.abnormal_or_aggregate for c in cells])


def cmd_segment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(args.verbose, out / "diagnostics.log")
    cfg = _load_config(args.config, _overrides(args))
    calibration = Calibration(args.pixel_size_um, args.wavelength_nm)
    result = run_pipeline(args.input_dir, cfg, args.workers, calibration)
    write_outputs(result, out, args.overlays, args.stats_dump, calibration)
    c = result.manifest.counts
    print(f"{c['images_processed']} images ({c['images_filtered']} filtered, "
          f"{c['load_errors']} unreadable), {c['cells']} cells, "
          f"{c['cells_with_nucleus']} with nucleus; threshold "
          f"{result.stats.threshold:.6g} rad -> {out}")
    return EXIT_OK


def _phantom_params(args) -> PhantomParams:
    values = {}
    if args.params:
        values.update(json.loads(Path(args.params).read_text()))
    for name in ("n_cells", "n_debris", "n_granules", "noise_sigma"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return PhantomParams.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid phantom parameters: {exc}") from exc


def _add_phantom_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON file with phantom parameters")
    p.add_argument("--cells", dest="n_cells", type=int)
    p.add_argument("--debris", dest="n_debris", type=int)
    p.add_argument("--granules", dest="n_granules", type=int)
    p.add_argument("--noise-sigma", type=float)


def cmd_phantom_generate(args) -> int:
    _setup_logging(args.verbose)
    params = _phantom_params(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in generate_measurement(args.n_scenes, params, args.seed):
        scene.save(out)
    print(f"wrote {args.n_scenes} scenes to {out}")
    return EXIT_OK


def cmd_phantom_evaluate(args) -> int:
    _setup_logging(args.verbose)
    cfg = _load_config(args.config, _overrides(args))
    raws = sorted(Path(args.scene_dir).glob("*.raw"))
    scenes = [PhantomScene.load(p) for p in raws
              if Path(f"{p.with_suffix('')}.truth.json").exists()]
    if not scenes:
        raise NoImagesError(f"no phantom scenes in {args.scene_dir}")
    result = run_images([s.image for s in scenes], cfg, args.workers)
    report = evaluate_run(scenes, result, args.iou, args.boundary_iou)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_phantom_bench(args) -> int:
    _setup_logging(args.verbose)
    cfg = _load_config(args.config, _overrides(args))
    params = _phantom_params(args)
    images = [s.image for s in generate_measurement(args.n_scenes, params, args.seed)]
    res = benchmark(images, cfg, args.workers, args.repetitions)
    print(res.summary())
    if args.out:
        Path(args.out).write_text(json.dumps(res.to_dict(), indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpmseg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment every image in a directory")
    seg.add_argument("input_dir")
    seg.add_argument("--pixel-size-um", type=float, default=None,
                     help="pixel size in µm (overrides file metadata)")
    seg.add_argument("--wavelength-nm", type=float, default=None,
                     help="illumination wavelength in nm (overrides file metadata)")
    seg.add_argument("--out", required=True, help="output directory")
    seg.add_argument("--overlays", action="store_true", help="write PNG overlays")
    seg.add_argument("--stats-dump", action="store_true", help="write per-image statistics")
    _add_config_args(seg)
    seg.set_defaults(func=cmd_segment)

    ph = sub.add_parser("phantom", help="synthetic scenes with ground truth")
    phsub = ph.add_subparsers(dest="phantom_command", required=True)

    gen = phsub.add_parser("generate", help="write phantom scenes and their ground truth")
    gen.add_argument("--out", required=True)
    _add_phantom_args(gen)
    gen.set_defaults(func=cmd_phantom_generate)

    ev = phsub.add_parser("evaluate", help="segment saved scenes and count error classes")
    ev.add_argument("scene_dir")
    ev.add_argument("--out", help="JSON report path")
    ev.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    ev.add_argument("--boundary-iou", type=float, default=0.8,
                    help="IoU below which a matched boundary counts as poor")
    _add_config_args(ev)
    ev.set_defaults(func=cmd_phantom_evaluate)

    bench = phsub.add_parser("bench", help="time the pipeline on generated scenes")
    bench.add_argument("--repetitions", type=int, default=3)
    bench.add_argument("--out", help="JSON result path")
    _add_phantom_args(bench)
    _add_config_args(bench)
    bench.set_defaults(func=cmd_phantom_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OvercrowdedError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateThresholdError as exc:
        print(f"error: {exc} (pass --fallback-threshold to continue)", file=sys.stderr)
        return EXIT_DEGENERATE
    except NoImagesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_IMAGES


if __name__ == "__main__":
    sys.exit(main())
