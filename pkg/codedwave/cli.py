#!/usr/bin/env python3
"""
Command-line interface for coded diverging-wave imaging experiments.

Subcommands:
    simulate   phantom + scheme -> RF frames
    beamform   RF frames -> beamformed image
    metrics    image(s) -> CSV curves and profiles
    optimize   aperture/sector scenarios -> virtual source sweeps
    render     image -> PGM
    compare    two metric CSVs -> difference report
    run        the whole chain, with a manifest
"""

from pathlib import Path
from typing import List, Optional, Sequence
import argparse
import logging
import sys

import colorama
import numpy as np
from tqdm import tqdm

from codedwave import rfio
from codedwave.acoustics import PIN_ROWS, PinLayout
from codedwave.beamform import render
from codedwave.config import CODE_LENGTHS, SCHEMES, ConfigError, ExperimentConfig, apply_overrides, parse_config
from codedwave.metrics import (
    RoiSpec,
    cnr,
    compare_tables,
    noise_power,
    penetration_depth,
    signal_strength_profile,
    snr_plus_one,
    ssr,
    write_depth_curve,
    write_profile,
)
from codedwave.optimize import (
    DEFAULT_CANDIDATES,
    DESK_CANDIDATES,
    MissingScenarioError,
    sweep_rv,
    table1_scenarios,
    table1_trends,
    write_sweep,
)
from codedwave.output_locations import (
    ensure_output_paths,
    find_frames,
    get_output_paths,
    get_run_info,
    group_frames,
    validate_paths,
)
from codedwave.pipeline import (
    empty_phantom,
    image_events,
    run_pipeline,
    write_acquisition,
    write_banks,
)
from codedwave.receiver import build_banks

# Initialize colorama for cross-platform colored output
colorama.init()
tqdm.monitor_interval = 0

GREEN = colorama.Fore.GREEN
YELLOW = colorama.Fore.YELLOW
RED = colorama.Fore.RED
BLUE = colorama.Fore.CYAN
RESET = colorama.Fore.RESET

logger = logging.getLogger(__name__)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment configuration file")
    common.add_argument("--out", help="Output directory (overrides the configuration)")
    common.add_argument("--seed", type=int, help="Noise and phantom seed")
    common.add_argument("--scheme", choices=SCHEMES, help="Imaging scheme")
    common.add_argument("--code-bits", type=int, choices=CODE_LENGTHS, help="Golay code length (1 = 2-cycle pulse)")
    common.add_argument("--rv", type=float, help="Virtual source distance in mm (dw scheme)")
    common.add_argument("--debug", action="store_true", help="Print additional debug information")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="codedwave", description="Coded diverging-wave ultrasound imaging")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate RF frames")
    simulate.add_argument("--noise-only", type=int, default=0, metavar="K",
                          help="Write K noise-only acquisitions instead of the phantom")

    beamform = sub.add_parser("beamform", parents=[common], help="Beamform stored RF frames")
    beamform.add_argument("--frames", help="Frame directory (default <out>/frames)")
    beamform.add_argument("--output", help="Image container (default <out>/images/image.rf)")

    metrics = sub.add_parser("metrics", parents=[common], help="Compute image metrics")
    metrics.add_argument("--image", help="Image container (default <out>/images/image.rf)")
    metrics.add_argument("--noise-images", nargs="*", default=[], help="Noise-only image containers")
    metrics.add_argument("--pins", choices=[p.value for p in PinLayout if p in PIN_ROWS],
                         help="Pin row to profile")
    metrics.add_argument("--ssr", nargs=2, type=float, metavar=("X_MM", "Z_MM"), help="Pin for the SSR")
    metrics.add_argument("--cyst", nargs=3, type=float, metavar=("X_MM", "Z_MM", "D_MM"), help="Cyst ROI disc")
    metrics.add_argument("--background", nargs=3, type=float, metavar=("X_MM", "Z_MM", "D_MM"),
                         help="Background ROI disc")

    optimize = sub.add_parser("optimize", parents=[common], help="Sweep the virtual source distance")
    optimize.add_argument("--scenario", nargs="*", help="Scenario names (default: all six)")
    optimize.add_argument("--desk", action="store_true", help="Use the reduced desk-scale scenarios")
    optimize.add_argument("--step-mm", type=float, help="Candidate grid step in mm")
    optimize.add_argument("--min-mm", type=float, help="Smallest candidate in mm")
    optimize.add_argument("--max-mm", type=float, help="Largest candidate in mm")
    optimize.add_argument("--workers", type=int, default=1, help="Parallel candidate evaluations")

    rend = sub.add_parser("render", parents=[common], help="Render an image as PGM")
    rend.add_argument("--image", help="Image container (default <out>/images/image.rf)")
    rend.add_argument("--output", help="PGM file (default next to the image)")

    compare = sub.add_parser("compare", parents=[common], help="Difference of two metric CSVs")
    compare.add_argument("first")
    compare.add_argument("second")
    compare.add_argument("--output", help="Write the difference table to this CSV")

    sub.add_parser("run", parents=[common], help="Run the full pipeline")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file (or defaults) with command-line overrides."""
    config = parse_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(config, scheme=args.scheme, code_bits=args.code_bits,
                           rv_mm=args.rv, seed=args.seed, out=args.out)


def _candidates(args: argparse.Namespace) -> np.ndarray:
    default = DESK_CANDIDATES if args.desk else DEFAULT_CANDIDATES
    if args.step_mm is None and args.min_mm is None and args.max_mm is None:
        return default
    lo = args.min_mm if args.min_mm is not None else default[0] * 1e3
    hi = args.max_mm if args.max_mm is not None else default[-1] * 1e3
    step = args.step_mm if args.step_mm is not None else 0.5
    return np.round(np.arange(lo, hi + step / 2.0, step), 6) * 1e-3


def _report_run(root: Path) -> None:
    info = get_run_info(root)
    if "error" in info:
        print(f"{YELLOW}{root}: {info['error']}{RESET}")
        return
    print(f"{BLUE}Run {info['name']}: {info['frames']} frames, {info['noise_frames']} noise frames, "
          f"{info['images']} images, manifest {'yes' if info['manifest'] == 'True' else 'no'}{RESET}")


def cmd_simulate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    paths = ensure_output_paths(get_output_paths(config.output.directory))
    geometry = config.array_geometry()
    banks = build_banks(config.make_excitation(), geometry, config.medium_model(),
                        config.element_response(), compensate=config.imaging.compensate)
    write_banks(banks, paths.references_dir)
    if args.noise_only > 0:
        for k in range(1, args.noise_only + 1):
            directory = paths.noise_dir / f"r{k:02d}"
            written = write_acquisition(config, directory, empty_phantom(config), seed=config.seed + k)
            print(f"{GREEN}Noise realization {k}: {len(written)} frames in {directory}{RESET}")
        _report_run(paths.root)
        return 0
    written = write_acquisition(config, paths.frames_dir)
    print(f"{GREEN}Wrote {len(written)} frames to {paths.frames_dir}{RESET}")
    _report_run(paths.root)
    return 0


def cmd_beamform(args: argparse.Namespace, config: ExperimentConfig) -> int:
    paths = ensure_output_paths(get_output_paths(config.output.directory))
    frames_dir = Path(args.frames) if args.frames else paths.frames_dir
    groups = group_frames(find_frames(frames_dir))
    if not groups:
        print(f"{RED}No frames found in {frames_dir}{RESET}")
        return 1
    banks = build_banks(config.make_excitation(), config.array_geometry(), config.medium_model(),
                        config.element_response(), compensate=config.imaging.compensate)
    image = image_events(config, groups, banks)
    output = Path(args.output) if args.output else paths.images_dir / "image.rf"
    rfio.write_image(image.scanlines, image.grid, output)
    rfio.write_pgm(image.gray(config.imaging.dynamic_range_db), output.with_suffix(".pgm"))
    print(f"{GREEN}Beamformed {len(groups)} events into {output}{RESET}")
    return 0


def _disc(values: Sequence[float]) -> RoiSpec:
    x, z, d = (v * 1e-3 for v in values)
    return RoiSpec.disc(x, z, d)


def cmd_metrics(args: argparse.Namespace, config: ExperimentConfig) -> int:
    paths = ensure_output_paths(get_output_paths(config.output.directory))
    image_path = Path(args.image) if args.image else paths.images_dir / "image.rf"
    envelope, grid = rfio.read_image(image_path)

    if args.pins:
        pins = PIN_ROWS[PinLayout(args.pins)].positions()
        values = signal_strength_profile(envelope, grid, pins)
        target = write_profile(values, pins, paths.metrics_dir / f"profile_{args.pins}.csv")
        print(f"{GREEN}Signal strength profile written to {target}{RESET}")

    if args.ssr:
        value = ssr(envelope, grid, (args.ssr[0] * 1e-3, args.ssr[1] * 1e-3))
        print(f"{GREEN}SSR at ({args.ssr[0]:.1f}, {args.ssr[1]:.1f}) mm: {value:.2f} dB{RESET}")

    if args.cyst or args.background:
        if not (args.cyst and args.background):
            print(f"{RED}CNR needs both --cyst and --background{RESET}")
            return 1
        im = config.imaging
        image = render(envelope, grid, dynamic_range_db=im.dynamic_range_db,
                       target_mean_db=im.target_mean_db, pixel_size=im.pixel_mm * 1e-3)
        value = cnr(image.cartesian, _disc(args.cyst), _disc(args.background))
        print(f"{GREEN}CNR: {value:.3f}{RESET}")

    if args.noise_images:
        noise = []
        for path in args.noise_images:
            noise_env, noise_grid = rfio.read_image(path)
            if noise_grid.shape != grid.shape:
                print(f"{RED}Noise image {path} does not share the image grid{RESET}")
                return 1
            noise.append(noise_env)
        noise_curve = noise_power(noise, grid)
        curve = snr_plus_one(envelope, grid, noise_curve)
        target = write_depth_curve(curve, paths.metrics_dir / "snr_plus_one.csv")
        depth = penetration_depth(curve)
        where = "beyond range" if depth is None else f"{depth * 1e3:.1f} mm"
        print(f"{GREEN}SNR+1 curve written to {target}; penetration depth {where}{RESET}")
    return 0


def cmd_optimize(args: argparse.Namespace, config: ExperimentConfig) -> int:
    paths = ensure_output_paths(get_output_paths(config.output.directory))
    scenarios = table1_scenarios(desk=args.desk)
    if args.scenario:
        known = {s.name: s for s in scenarios}
        unknown = [name for name in args.scenario if name not in known]
        if unknown:
            print(f"{RED}Unknown scenario(s): {', '.join(unknown)}; expected {', '.join(known)}{RESET}")
            return 1
        scenarios = [known[name] for name in args.scenario]

    candidates = _candidates(args)
    sweep_dir = paths.root / "sweeps"
    results = []
    for scenario in scenarios:
        print(f"{BLUE}Sweeping {scenario.name} over {candidates.size} candidates{RESET}")
        result = sweep_rv(candidates, scenario, config, workers=args.workers)
        write_sweep(result, sweep_dir)
        print(f"{GREEN}{scenario.name}: best r_v {result.best_r_v * 1e3:.1f} mm, "
              f"DW - STA {result.central_strength_diff_db:+.1f} dB{RESET}")
        results.append(result)

    try:
        report = table1_trends(results)
    except MissingScenarioError as exc:
        print(f"{YELLOW}Trend report skipped: {exc}{RESET}")
        return 0
    colour = GREEN if report.passed else YELLOW
    for line in report.lines():
        print(f"{colour}{line}{RESET}")
    return 0


def cmd_render(args: argparse.Namespace, config: ExperimentConfig) -> int:
    paths = get_output_paths(config.output.directory)
    image_path = Path(args.image) if args.image else paths.images_dir / "image.rf"
    envelope, grid = rfio.read_image(image_path)
    im = config.imaging
    image = render(envelope, grid, dynamic_range_db=im.dynamic_range_db,
                   target_mean_db=im.target_mean_db, pixel_size=im.pixel_mm * 1e-3)
    output = Path(args.output) if args.output else image_path.with_suffix(".pgm")
    rfio.write_pgm(image.gray(im.dynamic_range_db), output)
    print(f"{GREEN}Rendered {image_path} to {output}{RESET}")
    return 0


def cmd_compare(args: argparse.Namespace, config: ExperimentConfig) -> int:
    table = compare_tables(args.first, args.second)
    worst = float(np.nanmax(np.abs(table["diff_db"].to_numpy()))) if len(table) else 0.0
    if args.output:
        table.to_csv(args.output, index=False, float_format="%.9g", lineterminator="\n")
    colour = GREEN if worst == 0 else YELLOW
    print(f"{colour}{len(table)} rows compared, max |diff| {worst:.3f} dB{RESET}")
    return 0


def cmd_run(args: argparse.Namespace, config: ExperimentConfig) -> int:
    result = run_pipeline(config)
    missing = [name for name, ok in validate_paths(result.paths).items() if not ok]
    if missing:
        print(f"{YELLOW}Missing output directories: {', '.join(missing)}{RESET}")
    for key, value in sorted(result.summary.items()):
        print(f"{GREEN}{key}: {value:.3f}{RESET}")
    print(f"{GREEN}{len(result.artifacts)} artifacts, manifest {result.manifest}{RESET}")
    _report_run(result.paths.root)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "beamform": cmd_beamform,
    "metrics": cmd_metrics,
    "optimize": cmd_optimize,
    "render": cmd_render,
    "compare": cmd_compare,
    "run": cmd_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the command-line tool."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    print(f"{BLUE}Coded Diverging-Wave Imaging: {args.command}{RESET}")
    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"{RED}Configuration error: {exc}{RESET}")
    except (OSError, ValueError) as exc:
        print(f"{RED}Error during {args.command}: {exc}{RESET}")
        if args.debug:
            logger.exception("Command %s failed", args.command)
    return 1


if __name__ == "__main__":
    sys.exit(main())
