"""Coarse-to-fine grid point motion estimation over independent point sets."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import warnings
from typing import Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from meshlift.core import (
    EstimationConfig,
    Frame,
    QuadMesh,
    Stage,
    SubpixelStage,
    build_uniform_mesh,
    check_same_shape,
    is_border_constrained,
    quantize_array,
    quantize_motion,
    refine_mesh,
    validate_mesh,
)
from meshlift.estimation.core import PointNeighborhood, evaluate_candidate
from meshlift.stat_utils import OnlineStatistics

logger = logging.getLogger(__name__)

CT_SCHEDULE: Tuple[Stage, ...] = (
    Stage(256, 1, 3),
    Stage(128, 1, 3),
    Stage(64, 1, 4),
    Stage(32, 1, 5),
    Stage(16, 1, 6),
    Stage(8, 1, 9),
)

MR_SCHEDULE: Tuple[Stage, ...] = (
    Stage(64, 1, 10),
    Stage(32, 1, 5),
    Stage(16, 1, 6),
    Stage(8, 1, 9),
)

FLAT_SCHEDULE: Tuple[Stage, ...] = (Stage(8, 1, 30),)

_ITERATIONS_PER_SIZE = {256: 3, 128: 3, 64: 4, 32: 5, 16: 6, 8: 9}
TOTAL_ITERATIONS = 30


def ct_schedule() -> Tuple[Stage, ...]:
    return CT_SCHEDULE


def mr_schedule() -> Tuple[Stage, ...]:
    return MR_SCHEDULE


def flat_schedule() -> Tuple[Stage, ...]:
    return FLAT_SCHEDULE


def default_schedule(frame_width: int, frame_height: int) -> Tuple[Stage, ...]:
    """Halve from the largest power of two <= min(width, height) / 2 down to 8.

    Later stages use the usual per-size iteration counts and the first stage takes the
    remainder of a 30 iteration budget.
    """
    limit = max(min(frame_width, frame_height) // 2, 2)
    start = 1 << (limit.bit_length() - 1)
    sizes = []
    bs = start
    while True:
        sizes.append(bs)
        if bs <= 8 or bs // 2 < 2:
            break
        bs //= 2

    stages = [Stage(size, 1, _ITERATIONS_PER_SIZE.get(size, 3)) for size in sizes]
    remainder = TOTAL_ITERATIONS - sum(stage.iterations for stage in stages[1:])
    stages[0] = stages[0]._replace(iterations=max(stages[0].iterations, remainder))
    return tuple(stages)


@dataclasses.dataclass(frozen=True)
class EstimationState:
    """Normalized frame pair and the mesh being estimated."""

    f_ref: np.ndarray
    f_cur: np.ndarray
    mesh: QuadMesh

    @classmethod
    def from_frames(cls, f_odd: Frame, f_even: Frame, mesh: QuadMesh) -> EstimationState:
        check_same_shape(f_odd, f_even)
        return cls(f_ref=f_odd.normalized, f_cur=f_even.normalized, mesh=mesh)


class PointUpdate(NamedTuple):
    point: Tuple[int, int]
    mv: Tuple[float, float]
    total: float
    previous_total: float

    @property
    def moved(self) -> bool:
        return self.total < self.previous_total


def _candidates(mesh: QuadMesh, point: Tuple[int, int], sr: float) -> Iterator[Tuple[float, float]]:
    """The 3x3 neighborhood of the current motion at spacing sr, dy-major and dx-minor, center excluded."""
    i, j = point
    fixed_x, fixed_y = is_border_constrained(mesh, i, j)
    mv_x, mv_y = mesh.motion[i, j]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            candidate = quantize_array([mv_x + dx * sr, mv_y + dy * sr])
            # Constrained components stay on their axis
            if fixed_x:
                candidate[0] = 0.0
            if fixed_y:
                candidate[1] = 0.0
            yield float(candidate[0]), float(candidate[1])


def refine_point(state: EstimationState, point: Tuple[int, int], sr: float, config: EstimationConfig) -> PointUpdate:
    """Pick the best of the current motion and its 3x3 search neighborhood for one grid point.

    The current motion is evaluated first and a candidate replaces the best so far only when it is
    strictly cheaper, so the adopted cost never exceeds the current one.
    """
    mesh = state.mesh
    i, j = point
    neighborhood = PointNeighborhood.around(mesh, point)
    current = (float(mesh.motion[i, j, 0]), float(mesh.motion[i, j, 1]))

    def cost(mv: Tuple[float, float]) -> float:
        result = evaluate_candidate(state.f_ref, state.f_cur, mesh, point, mv, config, neighborhood)
        return math.inf if result is None else result.total

    best_mv = current
    best_cost = current_cost = cost(current)
    for candidate in _candidates(mesh, point, sr):
        if candidate == current:
            continue
        candidate_cost = cost(candidate)
        if candidate_cost < best_cost:
            best_mv, best_cost = candidate, candidate_cost

    if math.isinf(best_cost):
        warnings.warn(f"Every candidate for grid point {point} was rejected, keeping its motion")
        return PointUpdate(point, current, best_cost, current_cost)
    assert best_cost <= current_cost, f"Adopted cost {best_cost} exceeds current cost {current_cost} at {point}"
    return PointUpdate(point, best_mv, best_cost, current_cost)


def partition_into_sets(mesh: QuadMesh) -> List[List[Tuple[int, int]]]:
    """Split the lattice by (i mod 2, j mod 2) into four sets whose members share no quadrilateral."""
    sets: List[List[Tuple[int, int]]] = [[], [], [], []]
    for i in range(mesh.rows):
        for j in range(mesh.cols):
            sets[2 * (i % 2) + (j % 2)].append((i, j))
    return sets


def run_iteration(
    state: EstimationState,
    sr: float,
    config: EstimationConfig,
    executor: Optional[concurrent.futures.Executor] = None,
) -> EstimationState:
    """Refine every grid point once, one independent set at a time.

    All points of a set are evaluated against a snapshot of the mesh taken before the set and
    their updates are committed together, so the result does not depend on evaluation order
    or on the number of worker threads.
    """
    costs = []
    moved = 0
    for members in partition_into_sets(state.mesh):
        snapshot = state

        def refine(point: Tuple[int, int]) -> PointUpdate:
            return refine_point(snapshot, point, sr, config)

        if executor is not None:
            updates = list(executor.map(refine, members))
        else:
            updates = [refine(point) for point in members]

        motion = np.array(snapshot.mesh.motion)
        for update in updates:
            motion[update.point] = update.mv
        state = dataclasses.replace(state, mesh=snapshot.mesh.with_motion(motion))
        costs.append(OnlineStatistics.from_values(update.total for update in updates))
        moved += sum(update.moved for update in updates)

    stats = OnlineStatistics.merge(costs)
    logger.debug(
        "Iteration at sr %g moved %d of %d points, cost mean %.6g max %.6g, %d rejected",
        sr,
        moved,
        stats.current_count + stats.non_finite,
        stats.mean(),
        stats.maximum,
        stats.non_finite,
    )
    return state


def hierarchical_estimate(
    f_odd: Frame,
    f_even: Frame,
    config: EstimationConfig,
    initial_mesh: Optional[QuadMesh] = None,
) -> QuadMesh:
    """Estimate the mesh mapping f_even's pixels onto f_odd.

    Starts from a zero-motion mesh at the first stage's quadrilateral size (or `initial_mesh`),
    runs each stage's iterations, refines between stages and finishes with the subpixel stages.
    """
    width, height = check_same_shape(f_odd, f_even)
    schedule = config.schedule or default_schedule(width, height)
    if initial_mesh is not None:
        validate_mesh(initial_mesh, config.td)
        mesh = initial_mesh
    else:
        mesh = build_uniform_mesh(width, height, schedule[0].bs)
    state = EstimationState.from_frames(f_odd, f_even, mesh)

    executor = concurrent.futures.ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for stage in schedule:
            while state.mesh.bs > stage.bs:
                state = dataclasses.replace(state, mesh=quantize_motion(refine_mesh(state.mesh, config.td), config.td))
            for _ in range(stage.iterations):
                state = run_iteration(state, stage.sr, config, executor)
            logger.info(
                "Finished stage bs=%d sr=%g after %d iterations, mean |mv| %.4f",
                stage.bs,
                stage.sr,
                stage.iterations,
                _mean_motion(state.mesh),
            )

        last_bs = schedule[-1].bs
        for subpixel in config.subpixel_stages:
            state = _run_subpixel(state, subpixel, config, executor)
            logger.info("Finished subpixel stage bs=%d sr=%g lambda=%g", last_bs, subpixel.sr, subpixel.reg_lambda)
    finally:
        if executor is not None:
            executor.shutdown()

    return state.mesh


def _run_subpixel(
    state: EstimationState,
    subpixel: SubpixelStage,
    config: EstimationConfig,
    executor: Optional[concurrent.futures.Executor],
) -> EstimationState:
    stage_config = dataclasses.replace(config, reg_lambda=subpixel.reg_lambda)
    return run_iteration(state, subpixel.sr, stage_config, executor)


def _mean_motion(mesh: QuadMesh) -> float:
    return float(np.mean(np.hypot(mesh.motion[..., 0], mesh.motion[..., 1])))
