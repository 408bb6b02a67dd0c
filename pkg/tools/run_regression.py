"""
Directional regression report for mesh-compensated lifting on synthetic phantoms.

Checks that compensation beats plain Haar lifting, that smoothness grows with the regularizer weight,
that D13 does not lose to D11 and that the estimator recovers a known radial expansion. Every check
is printed as a CSV row; the exit code is non-zero if any check fails.

How to run:
```
python tools/run_regression.py --size 128 [--out report.csv]
```
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time

from meshlift.core import EstimationConfig, Metric
from meshlift.estimation import hierarchical_estimate, mr_schedule
from meshlift.evaluation import endpoint_error, highpass_energy, mesh_smoothness, psnr, warped_lowpass_psnr
from meshlift.formats import write_rows
from meshlift.lifting import haar_analysis, mc_analysis
from meshlift.phantom import FilteredNoise, GaussianBlobs, PhantomSpec, RadialExpansion, generate

LAMBDAS = (0.0, 0.0003, 0.0004, 0.0005, 0.0007)

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the phantom regression checks")
    parser.add_argument("--size", type=int, default=128, help="Phantom width and height")
    parser.add_argument("--amplitude", type=float, default=6.0, help="Peak radial displacement in pixels")
    parser.add_argument("--out", type=str, default=None, help="CSV destination, defaults to stdout")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    size = args.size
    radius = size / 4
    rows = []
    failed = False

    def record(check: str, value: float, reference: float, passed: bool) -> None:
        global failed
        rows.append((check, float(value), float(reference), "pass" if passed else "FAIL"))
        failed = failed or not passed

    # Compensation benefit and estimator accuracy on a clean expanding phantom
    clean = PhantomSpec(
        width=size,
        height=size,
        frames=2,
        deformation=RadialExpansion(amplitude=args.amplitude, radius=radius),
        texture=FilteredNoise(correlation_length=3.0, seed=1),
    )
    (f_odd, f_even), (truth,) = generate(clean)

    start = time.time()
    schedule_only = hierarchical_estimate(f_odd, f_even, EstimationConfig(schedule=mr_schedule(), subpixel_stages=()))
    full = hierarchical_estimate(f_odd, f_even, EstimationConfig(schedule=mr_schedule()))
    elapsed = time.time() - start

    identity_pair = haar_analysis(f_odd, f_even)
    compensated_pair = mc_analysis(f_odd, f_even, full)
    identity_psnr = psnr(f_odd, identity_pair.lowpass)
    compensated_psnr = psnr(f_odd, compensated_pair.lowpass)
    record("psnr_ref_L_gain_db", compensated_psnr - identity_psnr, 3.0, compensated_psnr - identity_psnr >= 3.0)
    energy_ratio = highpass_energy(compensated_pair.highpass) / max(highpass_energy(identity_pair.highpass), 1)
    record("highpass_energy_ratio", energy_ratio, 0.5, energy_ratio <= 0.5)
    schedule_error = endpoint_error(schedule_only, truth)
    subpixel_error = endpoint_error(full, truth)
    record("endpoint_error_schedule", schedule_error, 1.0, schedule_error < 1.0)
    record("endpoint_error_subpixel", subpixel_error, 0.6, subpixel_error < 0.6)
    record("estimation_seconds", elapsed, 120.0, elapsed < 120.0)

    # Regularizer and metric trends on a noisy phantom with a pinned seed
    noisy = dataclasses.replace(clean, texture=GaussianBlobs(count=24, seed=3), noise_sigma=0.01, seed=11)
    (n_odd, n_even), _ = generate(noisy)
    smoothness = []
    lowpass_psnr = []
    for reg_lambda in LAMBDAS:
        config = EstimationConfig(schedule=mr_schedule(), reg_lambda=reg_lambda, subpixel_stages=())
        mesh = hierarchical_estimate(n_odd, n_even, config)
        smoothness.append(mesh_smoothness(mesh).mean)
        lowpass_psnr.append(psnr(n_odd, mc_analysis(n_odd, n_even, mesh).lowpass))
        rows.append((f"smoothness_lambda_{reg_lambda}", smoothness[-1], float("nan"), "info"))
        rows.append((f"psnr_ref_L_lambda_{reg_lambda}", lowpass_psnr[-1], float("nan"), "info"))
    for k in range(1, len(LAMBDAS)):
        previous, current = smoothness[k - 1], smoothness[k]
        record(f"smoothness_non_decreasing_{LAMBDAS[k]}", current, previous, current >= previous)
        previous, current = lowpass_psnr[k - 1], lowpass_psnr[k]
        record(f"psnr_non_increasing_{LAMBDAS[k]}", current, previous, current <= previous)

    warped = {}
    for metric in Metric:
        config = EstimationConfig(schedule=mr_schedule(), metric=metric)
        mesh = hierarchical_estimate(n_odd, n_even, config)
        warped[metric] = warped_lowpass_psnr(mc_analysis(n_odd, n_even, mesh), n_even)
    record("warped_psnr_d13_vs_d11", warped[Metric.D13], warped[Metric.D11], warped[Metric.D13] >= warped[Metric.D11])

    columns = ("check", "value", "reference", "status")
    if args.out is None:
        write_rows(sys.stdout, columns, rows)
    else:
        with open(args.out, "w", newline="") as f:
            write_rows(f, columns, rows)

    sys.exit(1 if failed else 0)
