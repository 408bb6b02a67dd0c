"""Cost of moving a single grid point: compensation MSE, inverse compensation MSE and smoothness."""

from __future__ import annotations

import dataclasses
import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from meshlift.core import EstimationConfig, Metric, QuadMesh, is_border_constrained, quad_pixel_bounds
from meshlift.warp import corner_determinants, inverse_map_arrays, lattice_coefficients, sample_bilinear

__all__ = ["CandidateCost", "PointNeighborhood", "evaluate_candidate", "regularizer"]


class CandidateCost(NamedTuple):
    mse_comp: float
    mse_invcomp: float
    reg: float
    total: float


def regularizer(
    mesh: QuadMesh, point: Tuple[int, int], candidate_mv: Tuple[float, float], bs: Optional[int] = None
) -> float:
    """Mean distance between the candidate and the motion of the 8-connected neighbors, divided by bs."""
    i, j = point
    bs = mesh.bs if bs is None else bs
    window = mesh.motion[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2]
    own = (min(i, 1), min(j, 1))
    distances = np.hypot(window[..., 0] - candidate_mv[0], window[..., 1] - candidate_mv[1])
    num_neighbors = window.shape[0] * window.shape[1] - 1
    total = float(distances.sum() - distances[own])
    return total / num_neighbors / bs


@dataclasses.dataclass(frozen=True)
class PointNeighborhood:
    """The sub-lattice around one grid point and the current-frame pixels of its adjacent quadrilaterals.

    Pixel geometry only depends on the current frame, so it is computed once per point and reused
    for every candidate.
    """

    point: Tuple[int, int]
    rows: slice
    cols: slice
    anchors_x: np.ndarray
    anchors_y: np.ndarray
    # Per-pixel: local quad index (flattened), current x, current y
    quad_index: np.ndarray
    pixel_x: np.ndarray
    pixel_y: np.ndarray

    @classmethod
    def around(cls, mesh: QuadMesh, point: Tuple[int, int]) -> PointNeighborhood:
        i, j = point
        if not (0 <= i < mesh.rows and 0 <= j < mesh.cols):
            raise IndexError(f"Grid point {point} out of range for a {mesh.rows}x{mesh.cols} lattice")
        r0, r1 = max(i - 1, 0), min(i + 1, mesh.rows - 1)
        c0, c1 = max(j - 1, 0), min(j + 1, mesh.cols - 1)

        quad_index: List[np.ndarray] = []
        pixel_x: List[np.ndarray] = []
        pixel_y: List[np.ndarray] = []
        num_quad_cols = c1 - c0
        for qi in range(r0, r1):
            for qj in range(c0, c1):
                x0, x1, y0, y1 = quad_pixel_bounds(mesh, qi, qj)
                ys, xs = np.mgrid[y0:y1, x0:x1]
                quad_index.append(np.full(xs.size, (qi - r0) * num_quad_cols + (qj - c0)))
                pixel_x.append(xs.ravel())
                pixel_y.append(ys.ravel())

        return cls(
            point=point,
            rows=slice(r0, r1 + 1),
            cols=slice(c0, c1 + 1),
            anchors_x=mesh.anchors_x[c0 : c1 + 1],
            anchors_y=mesh.anchors_y[r0 : r1 + 1],
            quad_index=np.concatenate(quad_index),
            pixel_x=np.concatenate(pixel_x),
            pixel_y=np.concatenate(pixel_y),
        )


def _within_frame(mesh: QuadMesh, point: Tuple[int, int], candidate_mv: Tuple[float, float]) -> bool:
    i, j = point
    x = mesh.anchors_x[j] + candidate_mv[0]
    y = mesh.anchors_y[i] + candidate_mv[1]
    return 0 <= x <= mesh.frame_width - 1 and 0 <= y <= mesh.frame_height - 1


def evaluate_candidate(
    f_ref: np.ndarray,
    f_cur: np.ndarray,
    mesh: QuadMesh,
    point: Tuple[int, int],
    candidate_mv: Tuple[float, float],
    config: EstimationConfig,
    neighborhood: Optional[PointNeighborhood] = None,
) -> Optional[CandidateCost]:
    """Cost of moving `point` to `candidate_mv` with every other grid point of `mesh` held fixed.

    `f_ref` (the odd frame) and `f_cur` (the even frame) are normalized to [0, 1].
    Returns None when the candidate is rejected: it breaks a border constraint, leaves the frame,
    or drives an adjacent quadrilateral below the invertibility threshold.
    """
    i, j = point
    fixed_x, fixed_y = is_border_constrained(mesh, i, j)
    if (fixed_x and candidate_mv[0] != 0) or (fixed_y and candidate_mv[1] != 0):
        return None
    if not _within_frame(mesh, point, candidate_mv):
        return None

    if neighborhood is None:
        neighborhood = PointNeighborhood.around(mesh, point)

    motion = np.array(mesh.motion[neighborhood.rows, neighborhood.cols])
    motion[i - neighborhood.rows.start, j - neighborhood.cols.start] = candidate_mv
    ax, ay = neighborhood.anchors_x, neighborhood.anchors_y
    ref_x = ax[None, :] + motion[..., 0]
    ref_y = ay[:, None] + motion[..., 1]

    coefficients, n_u, n_v = lattice_coefficients(ax, ay, ref_x, ref_y)
    margins = corner_determinants(coefficients, n_u[None, :], n_v[:, None])
    if margins.min() < config.td:
        return None

    # Forward: every owned current pixel compared with the reference frame at its mapped position
    num_quad_cols = len(ax) - 1
    flat = coefficients.reshape(-1, 8)[neighborhood.quad_index].T
    origin_x = ax[neighborhood.quad_index % num_quad_cols]
    origin_y = ay[neighborhood.quad_index // num_quad_cols]
    u = neighborhood.pixel_x - origin_x
    v = neighborhood.pixel_y - origin_y
    x_r = origin_x + flat[0] * u * v + flat[1] * u + flat[2] * v + flat[3]
    y_r = origin_y + flat[4] * u * v + flat[5] * u + flat[6] * v + flat[7]
    residual = f_cur[neighborhood.pixel_y, neighborhood.pixel_x] - sample_bilinear(f_ref, x_r, y_r)
    mse_comp = float(np.mean(residual * residual))

    mse_invcomp = 0.0
    if config.metric == Metric.D13:
        mse_invcomp = _inverse_compensation_mse(f_ref, f_cur, ax, ay, ref_x, ref_y, coefficients, n_u, n_v)

    reg = regularizer(mesh, point, candidate_mv, mesh.bs)
    total = mse_comp + mse_invcomp + config.reg_lambda * reg
    return CandidateCost(mse_comp, mse_invcomp, reg, total)


def _inverse_compensation_mse(
    f_ref: np.ndarray,
    f_cur: np.ndarray,
    ax: np.ndarray,
    ay: np.ndarray,
    ref_x: np.ndarray,
    ref_y: np.ndarray,
    coefficients: np.ndarray,
    n_u: np.ndarray,
    n_v: np.ndarray,
) -> float:
    """Reference pixels inside each deformed quadrilateral compared with the current frame at their inverse position."""
    height, width = f_ref.shape
    sums = 0.0
    count = 0
    for a in range(len(ay) - 1):
        for b in range(len(ax) - 1):
            xs = ref_x[a : a + 2, b : b + 2]
            ys = ref_y[a : a + 2, b : b + 2]
            x0, x1 = max(math.floor(xs.min()), 0), min(math.ceil(xs.max()), width - 1)
            y0, y1 = max(math.floor(ys.min()), 0), min(math.ceil(ys.max()), height - 1)
            if x0 > x1 or y0 > y1:
                continue
            py, px = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
            px, py = px.ravel(), py.ravel()
            solution = inverse_map_arrays(coefficients[a, b], n_u[b], n_v[a], px - ax[b], py - ay[a])
            hit = solution.root_count > 0
            if not np.any(hit):
                continue
            predicted = sample_bilinear(f_cur, ax[b] + solution.u_c[hit], ay[a] + solution.v_c[hit])
            residual = f_ref[py[hit], px[hit]] - predicted
            sums += float(np.dot(residual, residual))
            count += int(hit.sum())
    return sums / count if count else 0.0
