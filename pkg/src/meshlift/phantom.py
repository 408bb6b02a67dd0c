"""Synthetic deforming image sequences with known displacement fields."""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.ndimage

from meshlift.core import ConfigError, DimensionError, Frame

logger = logging.getLogger(__name__)

# Smallest Jacobian determinant the true displacement may have
MIN_TRUTH_DETERMINANT = 0.3


@dataclasses.dataclass(frozen=True)
class NoDeformation:
    pass


@dataclasses.dataclass(frozen=True)
class UniformShift:
    """Frame t + 1 shows frame t's content moved by -vector: f_{t+1}(x) = f_t(x + vector)."""

    shift_x: float = 2.0
    shift_y: float = 0.0


@dataclasses.dataclass(frozen=True)
class RadialExpansion:
    """Smooth expansion about a center.

    The displacement magnitude is amplitude * g(r) with g peaking at 1 for r = radius, scaled
    in time by the phase a_t = (1 - cos(2 pi t / period)) / 2.
    """

    amplitude: float = 4.0
    period: float = 2.0
    radius: Optional[float] = None
    center_x: Optional[float] = None
    center_y: Optional[float] = None


Deformation = Union[NoDeformation, UniformShift, RadialExpansion]


@dataclasses.dataclass(frozen=True)
class GaussianBlobs:
    count: int = 12
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class ConcentricRings:
    spacing: float = 8.0


@dataclasses.dataclass(frozen=True)
class FilteredNoise:
    """Gaussian-smoothed white noise: structure in every direction, unlike rings or isolated blobs."""

    correlation_length: float = 3.0
    seed: int = 0


Texture = Union[GaussianBlobs, ConcentricRings, FilteredNoise]


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    width: int = 64
    height: int = 64
    frames: int = 4
    bit_depth: int = 12
    deformation: Deformation = dataclasses.field(default_factory=NoDeformation)
    texture: Texture = dataclasses.field(default_factory=GaussianBlobs)
    # Standard deviation as a fraction of the intensity range
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise DimensionError(f"Phantom must be at least 2x2 pixels, got {self.width}x{self.height}")
        if self.frames < 1:
            raise ConfigError("frames", f"must be at least 1, got {self.frames}")
        if not (1 <= self.bit_depth <= 16):
            raise ConfigError("bit_depth", f"must be between 1 and 16, got {self.bit_depth}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma", f"must be non-negative, got {self.noise_sigma}")
        if isinstance(self.deformation, RadialExpansion) and self.deformation.period <= 0:
            raise ConfigError("period", f"must be positive, got {self.deformation.period}")
        if isinstance(self.texture, ConcentricRings) and self.texture.spacing <= 0:
            raise ConfigError("ring_spacing", f"must be positive, got {self.texture.spacing}")
        if isinstance(self.texture, FilteredNoise) and self.texture.correlation_length <= 0:
            raise ConfigError(
                "correlation_length", f"must be positive, got {self.texture.correlation_length}"
            )

    @property
    def center(self) -> Tuple[float, float]:
        deformation = self.deformation
        cx, cy = (self.width - 1) / 2, (self.height - 1) / 2
        if isinstance(deformation, RadialExpansion):
            cx = cx if deformation.center_x is None else deformation.center_x
            cy = cy if deformation.center_y is None else deformation.center_y
        return cx, cy


def _texture(spec: PhantomSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Band-limited intensity in [0.1, 0.9] at real texture coordinates."""
    texture = spec.texture
    if isinstance(texture, ConcentricRings):
        cx, cy = spec.center
        return 0.5 + 0.4 * np.cos(2 * np.pi * np.hypot(x - cx, y - cy) / texture.spacing)
    if isinstance(texture, FilteredNoise):
        return _filtered_noise(spec, texture, x, y)

    rng = np.random.default_rng(texture.seed)
    size = min(spec.width, spec.height)
    centers_x = rng.uniform(0, spec.width - 1, texture.count)
    centers_y = rng.uniform(0, spec.height - 1, texture.count)
    sigmas = rng.uniform(size / 16, size / 6, texture.count)
    amplitudes = rng.uniform(0.3, 1.0, texture.count)
    total = np.zeros(np.shape(x))
    for cx, cy, sigma, amplitude in zip(centers_x, centers_y, sigmas, amplitudes):
        total += amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma * sigma))
    return 0.1 + 0.8 * (1 - np.exp(-total))


def _filtered_noise(spec: PhantomSpec, texture: FilteredNoise, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # The same field for every frame; positions outside the frame see its mirror image
    rng = np.random.default_rng(texture.seed)
    field = scipy.ndimage.gaussian_filter(
        rng.standard_normal((spec.height, spec.width)), texture.correlation_length, mode="mirror"
    )
    field /= field.std()
    values = scipy.ndimage.map_coordinates(field, [np.ravel(y), np.ravel(x)], order=3, mode="mirror")
    return 0.5 + 0.4 * np.tanh(0.5 * values.reshape(np.shape(x)))


def _profile(r: np.ndarray, radius: float) -> np.ndarray:
    """g(r) = (r / R) exp((1 - (r / R)**2) / 2): zero at the center, 1 at r = R, smooth everywhere."""
    s = r / radius
    return s * np.exp((1 - s * s) / 2)


def _phase(t: int, period: float) -> float:
    return 0.5 * (1 - math.cos(2 * math.pi * t / period))


def _radial_parameters(spec: PhantomSpec) -> Tuple[float, float, float, float, float]:
    deformation = spec.deformation
    assert isinstance(deformation, RadialExpansion)
    radius = deformation.radius if deformation.radius is not None else min(spec.width, spec.height) / 4
    if radius <= 0:
        raise ConfigError("radius", f"must be positive, got {radius}")
    cx, cy = spec.center
    return deformation.amplitude, deformation.period, radius, cx, cy


def _texture_coordinates(spec: PhantomSpec, t: int, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Where pixel (x, y) of frame t samples the texture."""
    deformation = spec.deformation
    if isinstance(deformation, NoDeformation):
        return x, y
    if isinstance(deformation, UniformShift):
        return x + t * deformation.shift_x, y + t * deformation.shift_y

    amplitude, period, radius, cx, cy = _radial_parameters(spec)
    r = np.hypot(x - cx, y - cy)
    pulled = _phase(t, period) * amplitude * _profile(r, radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, (r - pulled) / r, 1.0)
    return cx + (x - cx) * scale, cy + (y - cy) * scale


def _solve_radius(target: np.ndarray, phase: float, amplitude: float, radius: float) -> np.ndarray:
    """Solve s - phase * amplitude * g(s) = target for s with Newton iterations; the left side is monotone."""
    s = np.array(target, dtype=np.float64)
    for _ in range(50):
        u = s / radius
        value = s - phase * amplitude * _profile(s, radius) - target
        derivative = 1 - phase * amplitude * np.exp((1 - u * u) / 2) * (1 - u * u) / radius
        s = s - value / derivative
    return s


def _truth_field(spec: PhantomSpec, t: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Displacement D with texture(frame t at x + D) == texture(frame t + 1 at x), shape (2, height, width)."""
    deformation = spec.deformation
    if isinstance(deformation, NoDeformation):
        return np.zeros((2,) + x.shape)
    if isinstance(deformation, UniformShift):
        return np.stack([np.full(x.shape, float(deformation.shift_x)), np.full(x.shape, float(deformation.shift_y))])

    amplitude, period, radius, cx, cy = _radial_parameters(spec)
    r = np.hypot(x - cx, y - cy)
    target = r - _phase(t + 1, period) * amplitude * _profile(r, radius)
    s = _solve_radius(target, _phase(t, period), amplitude, radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, s / r, 1.0)
    return np.stack([(x - cx) * (scale - 1), (y - cy) * (scale - 1)])


def _min_determinant(field: np.ndarray) -> float:
    dx_dy, dx_dx = np.gradient(field[0])
    dy_dy, dy_dx = np.gradient(field[1])
    return float(np.min((1 + dx_dx) * (1 + dy_dy) - dx_dy * dy_dx))


def generate(spec: PhantomSpec) -> Tuple[List[Frame], List[np.ndarray]]:
    """Render the phantom.

    Returns the frames and, for every consecutive pair (t, t + 1), the (2, height, width) field D_t
    with frame_{t+1}(x) ~ frame_t(x + D_t(x)).
    """
    y, x = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    max_value = (1 << spec.bit_depth) - 1

    truth = [_truth_field(spec, t, x, y) for t in range(spec.frames - 1)]
    for t, field in enumerate(truth):
        determinant = _min_determinant(field)
        if determinant < MIN_TRUTH_DETERMINANT:
            raise ConfigError(
                "amplitude",
                f"deformation too large: displacement determinant {determinant:.3f} < {MIN_TRUTH_DETERMINANT} "
                f"between frames {t} and {t + 1}",
            )

    rng = np.random.default_rng(spec.seed)
    frames = []
    clipped = 0
    for t in range(spec.frames):
        tx, ty = _texture_coordinates(spec, t, x, y)
        values = _texture(spec, tx, ty)
        if spec.noise_sigma > 0:
            values = values + rng.normal(0, spec.noise_sigma, values.shape)
        samples = np.rint(values * max_value)
        clipped += int(np.count_nonzero((samples < 0) | (samples > max_value)))
        frames.append(Frame(np.clip(samples, 0, max_value).astype(np.int64), spec.bit_depth))

    if clipped > 0:
        warnings.warn(f"Clipped {clipped} noisy samples to [0, {max_value}]")
    logger.info("Generated %d phantom frames of %dx%d", spec.frames, spec.width, spec.height)
    return frames, truth
