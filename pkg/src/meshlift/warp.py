"""Bilinear quadrilateral transforms and the forward/inverse mesh warps built on them.

A quadrilateral of the current frame with upper-left corner (origin_x, origin_y) and extent
n_u x n_v is mapped onto its deformed counterpart in the reference frame by

    u_r = a11 * u * v + a12 * u + a13 * v + a14
    v_r = a21 * u * v + a22 * u + a23 * v + a24

where (u, v) and (u_r, v_r) are both measured relative to the same origin.
"""

from __future__ import annotations

import dataclasses
import enum
from typing import Any, NamedTuple, Sequence, Tuple, Union

import numpy as np
import scipy.ndimage

from meshlift.core import (
    DegenerateQuadError,
    DimensionError,
    Frame,
    InverseMapError,
    QuadMesh,
    SignedFrame,
    UncoveredPixelError,
    pixel_quads,
    quad_corners,
)

# Slack when deciding whether a root lies inside [0, n]
ROOT_TOLERANCE = 1e-6

ImageLike = Union[Frame, SignedFrame, np.ndarray]


@dataclasses.dataclass(frozen=True)
class BilinearMap:
    a11: float
    a12: float
    a13: float
    a14: float
    a21: float
    a22: float
    a23: float
    a24: float
    n_u: float
    n_v: float
    origin_x: float
    origin_y: float

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a13, self.a14, self.a21, self.a22, self.a23, self.a24])


class Branch(enum.Enum):
    LINEAR = "linear"
    PLUS = "plus"
    MINUS = "minus"


class InverseSolution(NamedTuple):
    u_c: float
    v_c: float
    branch: Branch


def _corner_coefficients(c11: Any, c12: Any, c21: Any, c22: Any, n_u: Any, n_v: Any) -> Tuple[Any, Any, Any, Any]:
    """Coefficients of w(u, v) = b1 u v + b2 u + b3 v + b4 taking the four corner values."""
    b4 = c11
    b2 = (c12 - c11) / n_u
    b3 = (c21 - c11) / n_v
    b1 = (c22 - c12 - c21 + c11) / (n_u * n_v)
    return b1, b2, b3, b4


def fit_bilinear(
    current_quad: Sequence[Tuple[float, float]], reference_quad: Sequence[Tuple[float, float]]
) -> BilinearMap:
    """Fit the bilinear map taking an axis-aligned current quadrilateral onto a reference quadrilateral.

    Both quadrilaterals list their corners as upper-left, upper-right, lower-left, lower-right.
    """
    if len(current_quad) != 4 or len(reference_quad) != 4:
        raise ValueError("A quadrilateral needs exactly four corners")
    (x11, y11), (x12, y12), (x21, y21), (x22, y22) = current_quad
    if x11 != x21 or x12 != x22 or y11 != y12 or y21 != y22:
        raise ValueError(f"Current quadrilateral must be axis-aligned, got {current_quad}")
    n_u = float(x12 - x11)
    n_v = float(y21 - y11)
    if n_u <= 0 or n_v <= 0:
        raise DegenerateQuadError(f"Quadrilateral has non-positive extent {n_u}x{n_v}")

    ur = [float(x) - x11 for x, _ in reference_quad]
    vr = [float(y) - y11 for _, y in reference_quad]
    a11, a12, a13, a14 = _corner_coefficients(*ur, n_u, n_v)
    a21, a22, a23, a24 = _corner_coefficients(*vr, n_u, n_v)
    return BilinearMap(a11, a12, a13, a14, a21, a22, a23, a24, n_u, n_v, float(x11), float(y11))


def mesh_quad_map(mesh: QuadMesh, qi: int, qj: int) -> BilinearMap:
    """The bilinear map of quadrilateral (qi, qj) of a mesh."""
    corners = quad_corners(mesh, qi, qj)
    return fit_bilinear([(p.x, p.y) for p in corners], [p.reference_position for p in corners])


def _apply(coefficients: Any, u: Any, v: Any) -> Tuple[Any, Any]:
    a11, a12, a13, a14, a21, a22, a23, a24 = coefficients
    return a11 * u * v + a12 * u + a13 * v + a14, a21 * u * v + a22 * u + a23 * v + a24


def forward_map(bmap: BilinearMap, u_c: Any, v_c: Any) -> Tuple[Any, Any]:
    """Map local current coordinates to local reference coordinates. Works on scalars and arrays."""
    return _apply(
        (bmap.a11, bmap.a12, bmap.a13, bmap.a14, bmap.a21, bmap.a22, bmap.a23, bmap.a24),
        np.asarray(u_c, dtype=np.float64) if np.ndim(u_c) else u_c,
        np.asarray(v_c, dtype=np.float64) if np.ndim(v_c) else v_c,
    )


def jacobian_determinant(coefficients: Any, u: Any, v: Any) -> Any:
    """Determinant of the Jacobian of the bilinear map at (u, v), in pixel units."""
    a11, a12, a13, _, a21, a22, a23, _ = coefficients
    du_du = a11 * v + a12
    du_dv = a11 * u + a13
    dv_du = a21 * v + a22
    dv_dv = a21 * u + a23
    return du_du * dv_dv - du_dv * dv_du


def corner_determinants(coefficients: np.ndarray, n_u: Any, n_v: Any) -> np.ndarray:
    """Jacobian determinants at the four corners; `coefficients` has a trailing axis of 8."""
    coefficients = np.moveaxis(np.asarray(coefficients), -1, 0)
    n_u = np.asarray(n_u, dtype=np.float64)
    n_v = np.asarray(n_v, dtype=np.float64)
    return np.stack(
        [
            jacobian_determinant(coefficients, 0.0, 0.0),
            jacobian_determinant(coefficients, n_u, 0.0),
            jacobian_determinant(coefficients, 0.0, n_v),
            jacobian_determinant(coefficients, n_u, n_v),
        ],
        axis=-1,
    )


def invertibility_margin(bmap: BilinearMap) -> float:
    """Minimum corner Jacobian determinant. Identity gives 1.0; a 2x expansion gives 4.0."""
    return float(np.min(corner_determinants(bmap.coefficients, bmap.n_u, bmap.n_v)))


def lattice_coefficients(
    anchors_x: np.ndarray, anchors_y: np.ndarray, ref_x: np.ndarray, ref_y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear coefficients of every quadrilateral of a (sub-)lattice.

    Returns (coefficients with shape (rows - 1, cols - 1, 8), n_u per quad column, n_v per quad row).
    """
    origin_x = anchors_x[:-1][None, :]
    origin_y = anchors_y[:-1][:, None]
    n_u = np.diff(anchors_x).astype(np.float64)
    n_v = np.diff(anchors_y).astype(np.float64)

    a1 = _corner_coefficients(
        ref_x[:-1, :-1] - origin_x,
        ref_x[:-1, 1:] - origin_x,
        ref_x[1:, :-1] - origin_x,
        ref_x[1:, 1:] - origin_x,
        n_u[None, :],
        n_v[:, None],
    )
    a2 = _corner_coefficients(
        ref_y[:-1, :-1] - origin_y,
        ref_y[:-1, 1:] - origin_y,
        ref_y[1:, :-1] - origin_y,
        ref_y[1:, 1:] - origin_y,
        n_u[None, :],
        n_v[:, None],
    )
    return np.stack(np.broadcast_arrays(*a1, *a2), axis=-1), n_u, n_v


def mesh_coefficients(mesh: QuadMesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ref_x, ref_y = mesh.reference_positions()
    return lattice_coefficients(mesh.anchors_x, mesh.anchors_y, ref_x, ref_y)


def mesh_margins(mesh: QuadMesh) -> np.ndarray:
    """Invertibility margin of every quadrilateral, shape (rows - 1, cols - 1)."""
    coefficients, n_u, n_v = mesh_coefficients(mesh)
    determinants = corner_determinants(coefficients, n_u[None, :], n_v[:, None])
    return determinants.min(axis=-1)


##########################################################
# Inverse transform
##########################################################


class InverseArrays(NamedTuple):
    u_c: np.ndarray
    v_c: np.ndarray
    # Number of distinct roots inside the quadrilateral: 0, 1 or 2
    root_count: np.ndarray
    branch: np.ndarray


_LINEAR, _PLUS, _MINUS = 0, 1, 2
_BRANCHES = {_LINEAR: Branch.LINEAR, _PLUS: Branch.PLUS, _MINUS: Branch.MINUS}


def _recover_u(coefficients: Any, u_r: np.ndarray, v_r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve for u given v, using whichever of the two map equations is better conditioned."""
    a11, a12, a13, a14, a21, a22, a23, a24 = coefficients
    d1 = a11 * v + a12
    d2 = a21 * v + a22
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(d1) >= np.abs(d2), (u_r - a13 * v - a14) / d1, (v_r - a23 * v - a24) / d2)


def _inside(u: np.ndarray, v: np.ndarray, n_u: float, n_v: float) -> np.ndarray:
    return (
        (u >= -ROOT_TOLERANCE)
        & (u <= n_u + ROOT_TOLERANCE)
        & (v >= -ROOT_TOLERANCE)
        & (v <= n_v + ROOT_TOLERANCE)
    )


def inverse_map_arrays(coefficients: Any, n_u: float, n_v: float, u_r: Any, v_r: Any) -> InverseArrays:
    """Vectorized inverse bilinear transform of local reference coordinates.

    Eliminating u from the map equations leaves alpha v**2 + beta v + gamma = 0. Roots are taken
    in the cancellation-free form and a root is accepted only if both u and v fall inside the
    quadrilateral. Accepted coordinates are clipped to [0, n].
    """
    a11, a12, a13, a14, a21, a22, a23, a24 = (float(c) for c in coefficients)
    u_r = np.asarray(u_r, dtype=np.float64)
    v_r = np.asarray(v_r, dtype=np.float64)

    alpha = a23 * a11 - a21 * a13
    beta = a21 * u_r - a11 * v_r + a24 * a11 - a21 * a14 - a22 * a13 + a23 * a12
    gamma = a22 * u_r - a12 * v_r + a24 * a12 - a22 * a14
    coefficients = (a11, a12, a13, a14, a21, a22, a23, a24)

    if abs(alpha) < 1e-12 * (abs(a11) + abs(a21) + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = -gamma / beta
        u = _recover_u(coefficients, u_r, v_r, v)
        inside = _inside(u, v, n_u, n_v)
        root_count = inside.astype(np.int64)
        branch = np.full(u_r.shape, _LINEAR, dtype=np.int64)
    else:
        discriminant = beta * beta - 4 * alpha * gamma
        # A double root may come out slightly negative
        real = discriminant >= -1e-12 * np.maximum(beta * beta, np.abs(4 * alpha * gamma))
        root = np.sqrt(np.maximum(discriminant, 0.0))
        q = -0.5 * (beta + np.copysign(root, beta))
        with np.errstate(divide="ignore", invalid="ignore"):
            v1 = q / alpha
            v2 = np.where(q != 0, gamma / q, v1)
        u1 = _recover_u(coefficients, u_r, v_r, v1)
        u2 = _recover_u(coefficients, u_r, v_r, v2)
        in1 = real & _inside(u1, v1, n_u, n_v)
        in2 = real & _inside(u2, v2, n_u, n_v)
        same = (np.abs(v1 - v2) <= ROOT_TOLERANCE) & (np.abs(u1 - u2) <= ROOT_TOLERANCE)
        root_count = in1.astype(np.int64) + in2.astype(np.int64) - (in1 & in2 & same).astype(np.int64)
        u = np.where(in1, u1, u2)
        v = np.where(in1, v1, v2)
        # q / alpha carries the sign opposite to beta
        first = np.where(beta >= 0, _MINUS, _PLUS)
        second = np.where(beta >= 0, _PLUS, _MINUS)
        branch = np.where(in1, first, second)

    u = np.where(root_count > 0, np.clip(u, 0.0, n_u), np.nan)
    v = np.where(root_count > 0, np.clip(v, 0.0, n_v), np.nan)
    return InverseArrays(u, v, root_count, branch)


def inverse_map(bmap: BilinearMap, u_r: float, v_r: float) -> InverseSolution:
    """Find the unique (u_c, v_c) in the quadrilateral with forward_map(u_c, v_c) = (u_r, v_r)."""
    result = inverse_map_arrays(bmap.coefficients, bmap.n_u, bmap.n_v, [u_r], [v_r])
    count = int(result.root_count[0])
    if count == 0:
        raise InverseMapError("no_root", u_r, v_r)
    if count > 1:
        raise InverseMapError("both_roots", u_r, v_r)
    return InverseSolution(float(result.u_c[0]), float(result.v_c[0]), _BRANCHES[int(result.branch[0])])


##########################################################
# Frame warps
##########################################################


def as_float_image(image: ImageLike) -> np.ndarray:
    if isinstance(image, (Frame, SignedFrame)):
        return image.samples.astype(np.float64)
    return np.asarray(image, dtype=np.float64)


def sample_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at real positions, clamped to the frame. Exact at integer positions."""
    height, width = image.shape
    x = np.clip(x, 0, width - 1)
    y = np.clip(y, 0, height - 1)
    return scipy.ndimage.map_coordinates(image, [y, x], order=1, mode="nearest", output=np.float64)


def _check_dimensions(image: np.ndarray, mesh: QuadMesh) -> None:
    if image.shape != (mesh.frame_height, mesh.frame_width):
        raise DimensionError(
            f"Frame of shape {image.shape[::-1]} does not match mesh frame {mesh.frame_width}x{mesh.frame_height}"
        )


def forward_positions(mesh: QuadMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Reference-frame position of every current-frame pixel, each (height, width)."""
    coefficients, _, _ = mesh_coefficients(mesh)
    qi, qj = pixel_quads(mesh)
    origin_x = mesh.anchors_x[qj].astype(np.float64)[None, :]
    origin_y = mesh.anchors_y[qi].astype(np.float64)[:, None]
    u = np.arange(mesh.frame_width)[None, :] - origin_x
    v = np.arange(mesh.frame_height)[:, None] - origin_y
    per_pixel = coefficients[qi[:, None], qj[None, :]]
    du, dv = _apply(np.moveaxis(per_pixel, -1, 0), u, v)
    return origin_x + du, origin_y + dv


def warp_frame_forward(reference: ImageLike, mesh: QuadMesh) -> np.ndarray:
    """W_fwd: sample `reference` at the mesh-mapped position of every current-frame pixel."""
    image = as_float_image(reference)
    _check_dimensions(image, mesh)
    x_r, y_r = forward_positions(mesh)
    return sample_bilinear(image, x_r, y_r)


def inverse_positions(mesh: QuadMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Current-frame position of every reference-frame pixel.

    Quadrilaterals are visited in lattice order and the first one whose inverse lands inside it
    claims the pixel.
    """
    width, height = mesh.frame_width, mesh.frame_height
    coefficients, n_u, n_v = mesh_coefficients(mesh)
    ref_x, ref_y = mesh.reference_positions()

    x_c = np.full((height, width), np.nan)
    y_c = np.full((height, width), np.nan)
    claimed = np.zeros((height, width), dtype=bool)

    for qi in range(mesh.rows - 1):
        for qj in range(mesh.cols - 1):
            xs = ref_x[qi : qi + 2, qj : qj + 2]
            ys = ref_y[qi : qi + 2, qj : qj + 2]
            x0, x1 = max(int(np.floor(xs.min())), 0), min(int(np.ceil(xs.max())), width - 1)
            y0, y1 = max(int(np.floor(ys.min())), 0), min(int(np.ceil(ys.max())), height - 1)
            if x0 > x1 or y0 > y1:
                continue
            open_y, open_x = np.nonzero(~claimed[y0 : y1 + 1, x0 : x1 + 1])
            if len(open_x) == 0:
                continue
            open_x += x0
            open_y += y0

            origin_x, origin_y = mesh.anchors_x[qj], mesh.anchors_y[qi]
            solution = inverse_map_arrays(
                coefficients[qi, qj], n_u[qj], n_v[qi], open_x - origin_x, open_y - origin_y
            )
            if np.any(solution.root_count > 1):
                k = int(np.argmax(solution.root_count > 1))
                raise InverseMapError("both_roots", float(open_x[k] - origin_x), float(open_y[k] - origin_y))
            hit = solution.root_count == 1
            x_c[open_y[hit], open_x[hit]] = origin_x + solution.u_c[hit]
            y_c[open_y[hit], open_x[hit]] = origin_y + solution.v_c[hit]
            claimed[open_y[hit], open_x[hit]] = True

    if not claimed.all():
        y, x = np.argwhere(~claimed)[0]
        raise UncoveredPixelError(int(x), int(y))
    return x_c, y_c


def warp_frame_inverse(signal: ImageLike, mesh: QuadMesh) -> np.ndarray:
    """W_inv: for every reference-frame pixel, sample `signal` at its inverse-mapped current position."""
    image = as_float_image(signal)
    _check_dimensions(image, mesh)
    x_c, y_c = inverse_positions(mesh)
    return sample_bilinear(image, x_c, y_c)
