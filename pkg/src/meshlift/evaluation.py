"""Quality measures for lifting results and meshes."""

from __future__ import annotations

import math
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from meshlift.core import DegenerateQuadError, DimensionError, Frame, QuadMesh, SignedFrame, SubbandPair
from meshlift.warp import warp_frame_forward

ImageLike = Union[Frame, SignedFrame, np.ndarray]

ROUNDING_MODES = ("nearest", "none")


def _samples(image: ImageLike) -> np.ndarray:
    if isinstance(image, (Frame, SignedFrame)):
        return image.samples.astype(np.float64)
    return np.asarray(image, dtype=np.float64)


def psnr(a: ImageLike, b: ImageLike, peak: Optional[float] = None) -> float:
    """Peak signal-to-noise ratio in dB; infinite for identical inputs.

    `peak` defaults to 2**bit_depth - 1 of whichever input is a Frame.
    """
    if peak is None:
        bit_depth = next((f.bit_depth for f in (a, b) if isinstance(f, Frame)), None)
        if bit_depth is None:
            raise ValueError("peak must be given when neither input is a Frame")
        peak = float((1 << bit_depth) - 1)
    x, y = _samples(a), _samples(b)
    if x.shape != y.shape:
        raise DimensionError(f"Cannot compare images of shape {x.shape} and {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)


def warped_lowpass_psnr(
    pair: SubbandPair, f_even: Frame, peak: Optional[float] = None, rounding: str = "nearest"
) -> float:
    """PSNR between f_even and the lowpass band warped onto f_even's grid.

    With rounding="nearest" the warped band is rounded to integers (halves rounded up) first.
    """
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"rounding must be one of {ROUNDING_MODES}, got {rounding!r}")
    warped = warp_frame_forward(pair.lowpass, pair.mesh)
    if rounding == "nearest":
        warped = np.floor(warped + 0.5)
    return psnr(warped, f_even, peak if peak is not None else float(f_even.max_value))


class SmoothnessReport(NamedTuple):
    per_quad: np.ndarray
    mean: float


def _smoothness(ax, ay, bx, by, px, py, dx, dy):
    edges = np.stack(
        [
            np.hypot(bx - ax, by - ay),
            np.hypot(px - bx, py - by),
            np.hypot(dx - px, dy - py),
            np.hypot(ax - dx, ay - dy),
        ]
    )
    diagonals = np.stack([np.hypot(px - ax, py - ay), np.hypot(dx - bx, dy - by)])
    if np.any(edges == 0) or np.any(diagonals == 0):
        raise DegenerateQuadError("Smoothness is undefined for a quadrilateral with a zero-length edge or diagonal")
    return (edges.min(axis=0) / edges.max(axis=0)) * (diagonals.min(axis=0) / diagonals.max(axis=0))


def quad_smoothness(
    a: Tuple[float, float], b: Tuple[float, float], p: Tuple[float, float], d: Tuple[float, float]
) -> float:
    """(shortest / longest edge) * (shorter / longer diagonal) of quadrilateral ABPD.

    A is the upper-left, B the upper-right, P the lower-right and D the lower-left corner.
    A square scores 1.
    """
    return float(_smoothness(*a, *b, *p, *d))


def mesh_smoothness(mesh: QuadMesh) -> SmoothnessReport:
    """Smoothness of every deformed quadrilateral and their mean."""
    rx, ry = mesh.reference_positions()
    per_quad = _smoothness(
        rx[:-1, :-1],
        ry[:-1, :-1],
        rx[:-1, 1:],
        ry[:-1, 1:],
        rx[1:, 1:],
        ry[1:, 1:],
        rx[1:, :-1],
        ry[1:, :-1],
    )
    return SmoothnessReport(per_quad, float(per_quad.mean()))


def entropy_rate_proxy(band: ImageLike) -> float:
    """Zeroth-order entropy of the band's sample values, in bits per sample."""
    _, counts = np.unique(np.asarray(band.samples if hasattr(band, "samples") else band), return_counts=True)
    probabilities = counts / counts.sum()
    return max(0.0, float(-np.sum(probabilities * np.log2(probabilities))))


def highpass_energy(band: ImageLike) -> int:
    """Sum of squared samples."""
    samples = np.asarray(band.samples if hasattr(band, "samples") else band, dtype=np.int64)
    return int(np.sum(samples * samples))


def endpoint_error(mesh: QuadMesh, truth: np.ndarray, interior_only: bool = True) -> float:
    """Mean distance between grid point motion and a dense (2, height, width) true displacement field.

    The truth is read at each grid point's anchor pixel. Border points are skipped by default
    since their motion is constrained.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (2, mesh.frame_height, mesh.frame_width):
        raise DimensionError(
            f"Truth field has shape {truth.shape}, expected (2, {mesh.frame_height}, {mesh.frame_width})"
        )
    rows = slice(1, mesh.rows - 1) if interior_only else slice(None)
    cols = slice(1, mesh.cols - 1) if interior_only else slice(None)
    ys = mesh.anchors_y[rows]
    xs = mesh.anchors_x[cols]
    true_x = truth[0][np.ix_(ys, xs)]
    true_y = truth[1][np.ix_(ys, xs)]
    motion = mesh.motion[rows, cols]
    if motion.size == 0:
        raise ValueError("Mesh has no interior grid points")
    return float(np.mean(np.hypot(motion[..., 0] - true_x, motion[..., 1] - true_y)))


def sequence_psnr(a: Sequence[Frame], b: Sequence[Frame]) -> np.ndarray:
    """Per-frame PSNR of two equally long sequences."""
    if len(a) != len(b):
        raise DimensionError(f"Sequences have different lengths: {len(a)} != {len(b)}")
    return np.array([psnr(x, y) for x, y in zip(a, b)])
