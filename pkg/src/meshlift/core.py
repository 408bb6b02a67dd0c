"""Core types shared across meshlift: frames, quadrilateral meshes, lattice geometry and configuration."""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

DEFAULT_TD = 0.2
DEFAULT_LAMBDA = 0.0004

# Motion vectors are stored as k / MOTION_SCALE for integer k, which the 6-decimal mesh format reproduces exactly
MOTION_SCALE = 1e6


class MeshliftError(Exception):
    """Base class for every error raised by meshlift."""


class DimensionError(MeshliftError, ValueError):
    """Frames or meshes have incompatible or too small dimensions."""


class DegenerateQuadError(MeshliftError, ValueError):
    """A quadrilateral has zero extent (or a zero-length edge)."""


class InvertibilityError(MeshliftError):
    """A quadrilateral's bilinear map fails the Jacobian determinant criterion."""

    def __init__(self, quad: Tuple[int, int], margin: float, td: float, pair: Optional[int] = None):
        self.quad = quad
        self.margin = margin
        self.td = td
        self.pair = pair
        super().__init__(f"Quadrilateral {quad} has invertibility margin {margin:.6g} < Td = {td}")

    def __str__(self) -> str:
        message = f"Quadrilateral {self.quad} has invertibility margin {self.margin:.6g} < Td = {self.td}"
        if self.pair is not None:
            message = f"pair {self.pair}: " + message
        return message


class InverseMapError(MeshliftError):
    """The inverse bilinear transform has no (or more than one) solution inside the quadrilateral."""

    def __init__(self, kind: str, u_r: float, v_r: float):
        self.kind = kind
        self.u_r = u_r
        self.v_r = v_r
        super().__init__(f"Inverse bilinear map found {kind.replace('_', ' ')} for ({u_r}, {v_r})")


class UncoveredPixelError(MeshliftError):
    """No deformed quadrilateral claims a reference-frame pixel."""

    def __init__(self, x: int, y: int):
        self.x = x
        self.y = y
        super().__init__(f"Pixel ({x}, {y}) is not covered by any deformed quadrilateral")


class ConfigError(MeshliftError, ValueError):
    """An invalid configuration key or value."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class FormatError(MeshliftError, ValueError):
    """A malformed or truncated file."""


##########################################################
# Frames
##########################################################


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclasses.dataclass(frozen=True, eq=False)
class Frame:
    """A single 2-D image with integer intensities in [0, 2**bit_depth).

    `samples` is stored row-major as an (height, width) int64 array.
    """

    samples: np.ndarray
    bit_depth: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise DimensionError(f"A frame must be 2-D, got shape {samples.shape}")
        if not np.issubdtype(samples.dtype, np.integer):
            raise ValueError(f"Frame samples must be integers, got {samples.dtype}")
        if not (1 <= self.bit_depth <= 16):
            raise ValueError(f"bit_depth must be between 1 and 16, got {self.bit_depth}")
        samples = samples.astype(np.int64)
        if samples.size > 0 and (samples.min() < 0 or samples.max() >= (1 << self.bit_depth)):
            raise ValueError(
                f"Frame samples must lie in [0, {1 << self.bit_depth}) for bit_depth {self.bit_depth}, "
                f"got [{samples.min()}, {samples.max()}]"
            )
        object.__setattr__(self, "samples", _readonly(samples))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def normalized(self) -> np.ndarray:
        """Real intensities in [0, 1]."""
        return self.samples / float(self.max_value)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(self.samples, other.samples)

    __hash__ = None  # type: ignore


@dataclasses.dataclass(frozen=True, eq=False)
class SignedFrame:
    """A 2-D band of signed integers (lowpass or highpass output of one lifting step).

    `bit_depth` is the bit depth of the frames the band was computed from, if known.
    """

    samples: np.ndarray
    bit_depth: Optional[int] = None

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise DimensionError(f"A band must be 2-D, got shape {samples.shape}")
        if not np.issubdtype(samples.dtype, np.integer):
            raise ValueError(f"Band samples must be integers, got {samples.dtype}")
        object.__setattr__(self, "samples", _readonly(samples.astype(np.int64)))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, SignedFrame):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    __hash__ = None  # type: ignore


def check_same_shape(*frames: Any) -> Tuple[int, int]:
    """Return (width, height) shared by all frames, raising DimensionError otherwise."""
    shapes = {np.shape(f.samples if hasattr(f, "samples") else f) for f in frames}
    if len(shapes) != 1:
        raise DimensionError(f"Frames have mismatched dimensions: {sorted(shapes)}")
    height, width = shapes.pop()
    return width, height


##########################################################
# Meshes
##########################################################


class GridPoint(NamedTuple):
    lattice_i: int
    lattice_j: int
    x: float
    y: float
    mv_x: float
    mv_y: float

    @property
    def reference_position(self) -> Tuple[float, float]:
        return (self.x + self.mv_x, self.y + self.mv_y)


def lattice_anchors(extent: int, bs: int) -> np.ndarray:
    """Anchor coordinates min(k * bs, extent - 1) for k = 0 .. ceil((extent - 1) / bs)."""
    count = math.ceil((extent - 1) / bs) + 1
    return np.minimum(np.arange(count, dtype=np.int64) * bs, extent - 1)


@dataclasses.dataclass(frozen=True, eq=False)
class QuadMesh:
    """A lattice of grid points with real-valued motion vectors.

    Anchors are current-frame pixel coordinates; `motion[i, j]` = (mv_x, mv_y) points from
    anchor (anchors_x[j], anchors_y[i]) to its position in the reference frame.
    """

    frame_width: int
    frame_height: int
    bs: int
    anchors_x: np.ndarray
    anchors_y: np.ndarray
    motion: np.ndarray

    def __post_init__(self):
        motion = np.asarray(self.motion, dtype=np.float64)
        expected = (len(self.anchors_y), len(self.anchors_x), 2)
        if motion.shape != expected:
            raise DimensionError(f"Motion array has shape {motion.shape}, expected {expected}")
        object.__setattr__(self, "anchors_x", _readonly(np.asarray(self.anchors_x, dtype=np.int64)))
        object.__setattr__(self, "anchors_y", _readonly(np.asarray(self.anchors_y, dtype=np.int64)))
        object.__setattr__(self, "motion", _readonly(motion))

    @property
    def cols(self) -> int:
        return len(self.anchors_x)

    @property
    def rows(self) -> int:
        return len(self.anchors_y)

    @property
    def quad_shape(self) -> Tuple[int, int]:
        return (self.rows - 1, self.cols - 1)

    @property
    def is_identity(self) -> bool:
        return not np.any(self.motion)

    def point(self, i: int, j: int) -> GridPoint:
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"Grid point ({i}, {j}) out of range for a {self.rows}x{self.cols} lattice")
        return GridPoint(
            i, j, float(self.anchors_x[j]), float(self.anchors_y[i]), *(float(m) for m in self.motion[i, j])
        )

    @property
    def points(self) -> List[GridPoint]:
        return [self.point(i, j) for i in range(self.rows) for j in range(self.cols)]

    def reference_positions(self) -> Tuple[np.ndarray, np.ndarray]:
        """Reference-frame x and y of every grid point, each (rows, cols)."""
        rx = self.anchors_x[None, :] + self.motion[:, :, 0]
        ry = self.anchors_y[:, None] + self.motion[:, :, 1]
        return rx, ry

    def with_motion(self, motion: np.ndarray) -> QuadMesh:
        return dataclasses.replace(self, motion=motion)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, QuadMesh):
            return NotImplemented
        return (
            (self.frame_width, self.frame_height, self.bs) == (other.frame_width, other.frame_height, other.bs)
            and np.array_equal(self.anchors_x, other.anchors_x)
            and np.array_equal(self.anchors_y, other.anchors_y)
            and np.array_equal(self.motion, other.motion)
        )

    __hash__ = None  # type: ignore


def build_uniform_mesh(frame_width: int, frame_height: int, bs: int) -> QuadMesh:
    """Create a zero-motion mesh with nominal quadrilateral size `bs`.

    The last row and column of quadrilaterals absorb the remainder when the frame size
    is not a multiple of `bs`.
    """
    if bs < 2:
        raise ValueError(f"Quadrilateral size must be at least 2, got {bs}")
    if frame_width < 2 or frame_height < 2:
        raise DimensionError(f"Frame must be at least 2x2 pixels, got {frame_width}x{frame_height}")
    anchors_x = lattice_anchors(frame_width, bs)
    anchors_y = lattice_anchors(frame_height, bs)
    return QuadMesh(
        frame_width=frame_width,
        frame_height=frame_height,
        bs=bs,
        anchors_x=anchors_x,
        anchors_y=anchors_y,
        motion=np.zeros((len(anchors_y), len(anchors_x), 2)),
    )


def identity_mesh(frame_width: int, frame_height: int) -> QuadMesh:
    """A zero-motion mesh made of a single quadrilateral spanning the frame."""
    return build_uniform_mesh(frame_width, frame_height, max(frame_width, frame_height, 2))


def project_border(motion: np.ndarray) -> np.ndarray:
    """Zero the constrained motion components of border grid points.

    Left/right columns keep mv_x = 0, top/bottom rows keep mv_y = 0, so corners are fixed.
    """
    result = np.array(motion, dtype=np.float64, copy=True)
    result[:, 0, 0] = 0
    result[:, -1, 0] = 0
    result[0, :, 1] = 0
    result[-1, :, 1] = 0
    return result


def is_border_constrained(mesh: QuadMesh, i: int, j: int) -> Tuple[bool, bool]:
    """Whether (mv_x, mv_y) of grid point (i, j) is pinned to zero."""
    return (j == 0 or j == mesh.cols - 1, i == 0 or i == mesh.rows - 1)


def quantize_array(values: Any) -> np.ndarray:
    # + 0.0 turns -0.0 into 0.0
    return np.rint(np.asarray(values, dtype=np.float64) * MOTION_SCALE) / MOTION_SCALE + 0.0


def quantize_motion(mesh: QuadMesh, td: float = DEFAULT_TD) -> QuadMesh:
    """Round every motion vector to a multiple of 1 / MOTION_SCALE and check the result is still invertible."""
    quantized = mesh.with_motion(quantize_array(mesh.motion))
    validate_mesh(quantized, td)
    return quantized


def validate_mesh(mesh: QuadMesh, td: float = DEFAULT_TD) -> None:
    """Raise InvertibilityError for the first quadrilateral (lattice order) whose margin is below td."""
    # warp builds on the types defined here
    from meshlift.warp import mesh_margins

    margins = mesh_margins(mesh)
    bad = np.argwhere(margins < td)
    if len(bad) > 0:
        qi, qj = (int(v) for v in bad[0])
        raise InvertibilityError((qi, qj), float(margins[qi, qj]), td)


def refine_mesh(mesh: QuadMesh, td: float = DEFAULT_TD) -> QuadMesh:
    """Halve the quadrilateral size, interpolating motion for the inserted grid points.

    Surviving grid points keep their motion vectors exactly. Every inserted point receives the
    bilinear interpolation of the coarse cell that contains it (on a coarse edge this is the
    average of the two adjacent points). Border constraints are re-imposed afterwards.
    """
    if mesh.bs < 4 or mesh.bs % 2 != 0:
        raise ValueError(f"Can only refine an even quadrilateral size >= 4, got {mesh.bs}")

    fine = build_uniform_mesh(mesh.frame_width, mesh.frame_height, mesh.bs // 2)

    def cell_weights(old: np.ndarray, new: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cell = np.clip(np.searchsorted(old, new, side="right") - 1, 0, len(old) - 2)
        t = (new - old[cell]) / (old[cell + 1] - old[cell])
        return cell, t

    cx, tx = cell_weights(mesh.anchors_x, fine.anchors_x)
    cy, ty = cell_weights(mesh.anchors_y, fine.anchors_y)

    m = mesh.motion
    tx = tx[None, :, None]
    ty = ty[:, None, None]
    motion = (
        (1 - ty) * (1 - tx) * m[np.ix_(cy, cx)]
        + (1 - ty) * tx * m[np.ix_(cy, cx + 1)]
        + ty * (1 - tx) * m[np.ix_(cy + 1, cx)]
        + ty * tx * m[np.ix_(cy + 1, cx + 1)]
    )

    # Inherited points are copied, not re-interpolated
    keep_x = np.searchsorted(fine.anchors_x, mesh.anchors_x)
    keep_y = np.searchsorted(fine.anchors_y, mesh.anchors_y)
    assert np.array_equal(fine.anchors_x[keep_x], mesh.anchors_x), "Coarse anchors must survive refinement"
    assert np.array_equal(fine.anchors_y[keep_y], mesh.anchors_y), "Coarse anchors must survive refinement"
    motion[np.ix_(keep_y, keep_x)] = m

    refined = fine.with_motion(project_border(motion))
    validate_mesh(refined, td)
    return refined


def quad_corners(mesh: QuadMesh, qi: int, qj: int) -> Tuple[GridPoint, GridPoint, GridPoint, GridPoint]:
    """Upper-left, upper-right, lower-left and lower-right grid points of quadrilateral (qi, qj)."""
    if not (0 <= qi < mesh.rows - 1 and 0 <= qj < mesh.cols - 1):
        raise IndexError(f"Quadrilateral ({qi}, {qj}) out of range for a {mesh.rows - 1}x{mesh.cols - 1} mesh")
    return (
        mesh.point(qi, qj),
        mesh.point(qi, qj + 1),
        mesh.point(qi + 1, qj),
        mesh.point(qi + 1, qj + 1),
    )


def quad_pixel_bounds(mesh: QuadMesh, qi: int, qj: int) -> Tuple[int, int, int, int]:
    """Half-open pixel range (x0, x1, y0, y1) of the current-frame pixels owned by quadrilateral (qi, qj).

    A pixel on a shared edge belongs to the quadrilateral below/right of it; the last row and
    column of quadrilaterals also own the frame's last pixel row and column.
    """
    x0, x1 = int(mesh.anchors_x[qj]), int(mesh.anchors_x[qj + 1])
    y0, y1 = int(mesh.anchors_y[qi]), int(mesh.anchors_y[qi + 1])
    if qj == mesh.cols - 2:
        x1 += 1
    if qi == mesh.rows - 2:
        y1 += 1
    return x0, x1, y0, y1


def pixel_quads(mesh: QuadMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrilateral row index of every pixel row and column index of every pixel column."""
    qj = np.clip(np.searchsorted(mesh.anchors_x, np.arange(mesh.frame_width), side="right") - 1, 0, mesh.cols - 2)
    qi = np.clip(np.searchsorted(mesh.anchors_y, np.arange(mesh.frame_height), side="right") - 1, 0, mesh.rows - 2)
    return qi, qj


##########################################################
# Lifting output
##########################################################


@dataclasses.dataclass(frozen=True)
class SubbandPair:
    """Lowpass L_t and highpass H_t of one lifting step, with the mesh used for compensation."""

    lowpass: SignedFrame
    highpass: SignedFrame
    mesh: QuadMesh

    def __post_init__(self):
        check_same_shape(self.lowpass, self.highpass)
        if (self.mesh.frame_width, self.mesh.frame_height) != (self.lowpass.width, self.lowpass.height):
            raise DimensionError("Mesh dimensions do not match the subbands")


##########################################################
# Estimation configuration
##########################################################


class Metric(enum.Enum):
    D11 = "d11"
    D13 = "d13"


class Stage(NamedTuple):
    bs: int
    sr: float
    iterations: int


class SubpixelStage(NamedTuple):
    sr: float
    reg_lambda: float


DEFAULT_SUBPIXEL_STAGES = (SubpixelStage(0.5, DEFAULT_LAMBDA), SubpixelStage(0.25, DEFAULT_LAMBDA))


@dataclasses.dataclass(frozen=True)
class EstimationConfig:
    """Settings for hierarchical grid point motion estimation.

    Arguments:
        schedule: (bs, sr, iterations) per hierarchy step. An empty schedule means the default
            schedule for the frame size is chosen at estimation time.
        reg_lambda: Weight of the smoothness regularizer in the cost function
        td: Minimum Jacobian determinant allowed at any quadrilateral corner
        metric: D11 (compensation MSE only) or D13 (adds the inverse compensation MSE)
        subpixel_stages: (sr, lambda) of the single-iteration refinements run after the schedule
        threads: Number of worker threads used within one independent set
    """

    schedule: Tuple[Stage, ...] = ()
    reg_lambda: float = DEFAULT_LAMBDA
    td: float = DEFAULT_TD
    metric: Metric = Metric.D13
    subpixel_stages: Tuple[SubpixelStage, ...] = DEFAULT_SUBPIXEL_STAGES
    threads: int = 1

    def __post_init__(self):
        schedule = tuple(Stage(int(bs), float(sr), int(it)) for bs, sr, it in self.schedule)
        subpixel = tuple(SubpixelStage(float(sr), float(lam)) for sr, lam in self.subpixel_stages)
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "subpixel_stages", subpixel)
        object.__setattr__(self, "metric", Metric(self.metric))

        for stage in schedule:
            if stage.bs < 2 or (stage.bs & (stage.bs - 1)) != 0:
                raise ConfigError("schedule", f"quadrilateral size {stage.bs} is not a power of two >= 2")
            if stage.sr <= 0:
                raise ConfigError("schedule", f"search range must be positive, got {stage.sr}")
            if stage.iterations < 0:
                raise ConfigError("schedule", f"iterations must be non-negative, got {stage.iterations}")
        for previous, current in zip(schedule, schedule[1:]):
            if current.bs >= previous.bs:
                raise ConfigError("schedule", "quadrilateral sizes must be strictly decreasing")
        for stage in subpixel:
            if stage.sr <= 0 or stage.reg_lambda < 0:
                raise ConfigError("subpixel", f"invalid subpixel stage {tuple(stage)}")
        if self.reg_lambda < 0:
            raise ConfigError("lambda", f"must be non-negative, got {self.reg_lambda}")
        if self.td <= 0:
            raise ConfigError("td", f"must be positive, got {self.td}")
        if self.threads < 1:
            raise ConfigError("threads", f"must be at least 1, got {self.threads}")

    @property
    def total_iterations(self) -> int:
        return sum(stage.iterations for stage in self.schedule)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schedule": [list(stage) for stage in self.schedule],
            "reg_lambda": self.reg_lambda,
            "td": self.td,
            "metric": self.metric.value,
            "subpixel_stages": [list(stage) for stage in self.subpixel_stages],
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> EstimationConfig:
        known = {field.name for field in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(key, "unknown estimation setting")
        kwargs: Dict[str, Any] = dict(values)
        for key in ("schedule", "subpixel_stages"):
            if key in kwargs:
                kwargs[key] = tuple(tuple(v) for v in kwargs[key])
        return cls(**kwargs)
