"""The meshlift command line program: phantom generation, decomposition, reconstruction and evaluation."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import List, Optional, Sequence

from meshlift.core import (
    ConfigError,
    DimensionError,
    FormatError,
    Frame,
    InverseMapError,
    InvertibilityError,
    Metric,
    SubbandPair,
    UncoveredPixelError,
)
from meshlift.evaluation import entropy_rate_proxy, mesh_smoothness, psnr, sequence_psnr, warped_lowpass_psnr
from meshlift.formats import (
    PASSTHROUGH_NAME,
    REPORT_NAME,
    DecompositionReport,
    Manifest,
    PairReport,
    highpass_name,
    lowpass_name,
    mesh_name,
    parse_estimation,
    parse_phantom,
    read_band,
    read_key_values,
    read_mesh,
    read_volume,
    write_band,
    write_mesh,
    write_rows,
    write_truth,
    write_volume,
)
from meshlift.lifting import DecompositionResult, decompose_sequence, reconstruct_sequence
from meshlift.phantom import generate
from meshlift.stat_utils import OnlineStatistics

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_LIFTING_FAILURE = 3

THREADS_ENV = "MESHLIFT_THREADS"


def _thread_count(requested: int) -> int:
    """Requested threads, capped by MESHLIFT_THREADS when set."""
    cap = os.environ.get(THREADS_ENV)
    if cap is None:
        return requested
    try:
        return max(1, min(requested, int(cap)))
    except ValueError:
        raise ConfigError(THREADS_ENV, f"cannot interpret {cap!r}")


def _truth_path(volume_path: str) -> str:
    return os.path.splitext(volume_path)[0] + ".truth.msgpack"


def cmd_phantom(config_path: Optional[str], out: str) -> int:
    values = read_key_values(config_path) if config_path else {}
    spec = parse_phantom(values)
    frames, truth = generate(spec)
    write_volume(out, frames)
    write_truth(_truth_path(out), truth)
    logger.info("Wrote %d frames to %s", len(frames), out)
    return EXIT_OK


def _pair_report(t: int, pair: SubbandPair, f_odd: Frame, f_even: Frame, rounding: str) -> PairReport:
    return PairReport(
        t=t,
        psnr_ref_L=psnr(f_odd, pair.lowpass),
        warped_psnr=warped_lowpass_psnr(pair, f_even, rounding=rounding),
        smoothness_mean=mesh_smoothness(pair.mesh).mean,
        entropy_L=entropy_rate_proxy(pair.lowpass),
        entropy_H=entropy_rate_proxy(pair.highpass),
    )


def cmd_decompose(
    volume_path: str,
    config_path: Optional[str],
    out_dir: str,
    metric: Optional[str] = None,
    reg_lambda: Optional[float] = None,
    td: Optional[float] = None,
    no_compensation: bool = False,
    progress: bool = False,
) -> int:
    frames = read_volume(volume_path)
    values = read_key_values(config_path) if config_path else {}
    config, options = parse_estimation(values)

    overrides = {}
    if metric is not None:
        overrides["metric"] = Metric(metric)
    if reg_lambda is not None:
        overrides["reg_lambda"] = reg_lambda
    if td is not None:
        overrides["td"] = td
    threads = _thread_count(options.threads)
    num_pairs = len(frames) // 2
    # Parallelize over pairs when there are several, otherwise inside the estimator
    overrides["threads"] = threads if num_pairs <= 1 else 1
    config = dataclasses.replace(config, **overrides)

    estimate = options.compensation == "estimate" and not no_compensation
    result = decompose_sequence(frames, config if estimate else "identity", threads=threads, progress=progress)

    os.makedirs(out_dir, exist_ok=True)
    rows: List[PairReport] = []
    for t, pair in enumerate(result.pairs):
        write_band(os.path.join(out_dir, lowpass_name(t)), pair.lowpass)
        write_band(os.path.join(out_dir, highpass_name(t)), pair.highpass)
        write_mesh(os.path.join(out_dir, mesh_name(t)), pair.mesh)
        rows.append(_pair_report(t, pair, frames[2 * t], frames[2 * t + 1], options.warped_psnr_rounding))
    if result.passthrough is not None:
        write_volume(os.path.join(out_dir, PASSTHROUGH_NAME), [result.passthrough])

    first = frames[0]
    Manifest(
        width=first.width,
        height=first.height,
        frames=len(frames),
        bit_depth=first.bit_depth,
        pairs=len(result.pairs),
        passthrough=result.passthrough is not None,
    ).save(out_dir)
    DecompositionReport(rows=rows).save_to_csv(os.path.join(out_dir, REPORT_NAME))

    for column in ("psnr_ref_L", "warped_psnr", "smoothness_mean", "entropy_H"):
        summary = OnlineStatistics.from_values(getattr(row, column) for row in rows).summary()
        logger.info(
            "%s: mean %.4f, sd %.4f, range [%.4f, %.4f] over %d pairs (%d non-finite)",
            column,
            summary.mean,
            summary.standard_deviation,
            summary.minimum,
            summary.maximum,
            summary.count,
            summary.non_finite,
        )
    return EXIT_OK


def load_decomposition(directory: str) -> DecompositionResult:
    manifest = Manifest.load(directory)
    pairs = []
    for t in range(manifest.pairs):
        lowpass = read_band(os.path.join(directory, lowpass_name(t)))
        highpass = read_band(os.path.join(directory, highpass_name(t)))
        mesh = read_mesh(os.path.join(directory, mesh_name(t)), manifest.width, manifest.height)
        pairs.append(SubbandPair(lowpass=lowpass, highpass=highpass, mesh=mesh))
    passthrough = None
    if manifest.passthrough:
        (passthrough,) = read_volume(os.path.join(directory, PASSTHROUGH_NAME))
    return DecompositionResult(pairs=pairs, passthrough=passthrough)


def cmd_reconstruct(directory: str, out: Optional[str] = None) -> int:
    try:
        result = load_decomposition(directory)
    except FileNotFoundError as e:
        print(f"meshlift: error: missing decomposition file {e.filename}", file=sys.stderr)
        return EXIT_LIFTING_FAILURE
    frames = reconstruct_sequence(result)
    out = out if out is not None else os.path.join(directory, "reconstructed.raw")
    write_volume(out, frames)
    logger.info("Reconstructed %d frames into %s", len(frames), out)
    return EXIT_OK


def _emit_rows(out: Optional[str], columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    if out is None:
        write_rows(sys.stdout, columns, rows)
    else:
        with open(out, "w", newline="") as f:
            write_rows(f, columns, rows)


def cmd_eval(a_path: str, b_path: str, out: Optional[str] = None) -> int:
    values = sequence_psnr(read_volume(a_path), read_volume(b_path))
    _emit_rows(out, ("frame", "psnr"), [(t, float(v)) for t, v in enumerate(values)])
    return EXIT_OK


def cmd_smoothness(directory: str, out: Optional[str] = None) -> int:
    manifest = Manifest.load(directory)
    rows = []
    for t in range(manifest.pairs):
        mesh = read_mesh(os.path.join(directory, mesh_name(t)), manifest.width, manifest.height)
        rows.append((t, mesh_smoothness(mesh).mean))
    _emit_rows(out, ("t", "smoothness_mean"), rows)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshlift", description="Mesh-compensated wavelet lifting of deforming image sequences"
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    phantom = commands.add_parser("phantom", help="Generate a synthetic deforming volume and its true motion")
    phantom.add_argument("--config", type=str, default=None, help="key=value phantom settings")
    phantom.add_argument("--out", type=str, required=True, help="Output volume path")

    decompose = commands.add_parser("decompose", help="Split a volume into lowpass/highpass bands and meshes")
    decompose.add_argument("volume", type=str)
    decompose.add_argument("--config", type=str, default=None, help="key=value estimation settings")
    decompose.add_argument("--out", type=str, required=True, help="Output directory")
    decompose.add_argument("--metric", choices=[m.value for m in Metric], default=None)
    decompose.add_argument("--lambda", dest="reg_lambda", type=float, default=None)
    decompose.add_argument("--td", type=float, default=None)
    decompose.add_argument("--no-compensation", action="store_true", help="Use plain Haar lifting")

    reconstruct = commands.add_parser("reconstruct", help="Rebuild the volume from a decomposition directory")
    reconstruct.add_argument("directory", type=str)
    reconstruct.add_argument("--out", type=str, default=None, help="Defaults to <directory>/reconstructed.raw")

    evaluate = commands.add_parser("eval", help="Per-frame PSNR between two volumes as CSV")
    evaluate.add_argument("a", type=str)
    evaluate.add_argument("b", type=str)
    evaluate.add_argument("--out", type=str, default=None, help="Defaults to stdout")

    smoothness = commands.add_parser("smoothness", help="Per-pair mesh smoothness of a decomposition as CSV")
    smoothness.add_argument("directory", type=str)
    smoothness.add_argument("--out", type=str, default=None, help="Defaults to stdout")

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    progress = not args.quiet and sys.stderr.isatty()

    try:
        if args.command == "phantom":
            return cmd_phantom(args.config, args.out)
        elif args.command == "decompose":
            return cmd_decompose(
                args.volume,
                args.config,
                args.out,
                metric=args.metric,
                reg_lambda=args.reg_lambda,
                td=args.td,
                no_compensation=args.no_compensation,
                progress=progress,
            )
        elif args.command == "reconstruct":
            return cmd_reconstruct(args.directory, args.out)
        elif args.command == "eval":
            return cmd_eval(args.a, args.b, args.out)
        else:
            return cmd_smoothness(args.directory, args.out)
    except (ConfigError, FormatError, DimensionError) as e:
        print(f"meshlift: error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (InvertibilityError, InverseMapError, UncoveredPixelError) as e:
        print(f"meshlift: error: {e}", file=sys.stderr)
        return EXIT_LIFTING_FAILURE
    except FileNotFoundError as e:
        print(f"meshlift: error: no such file {e.filename}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ValueError as e:
        print(f"meshlift: error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


def meshlift_program() -> None:
    """Entry point of the `meshlift` console script."""
    sys.exit(run())
