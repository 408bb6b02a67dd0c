"""Grid point motion estimation for mesh-compensated lifting."""

from __future__ import annotations

from meshlift.estimation.core import *  # noqa
from meshlift.estimation.hierarchical import (  # noqa
    CT_SCHEDULE,
    FLAT_SCHEDULE,
    MR_SCHEDULE,
    EstimationState,
    PointUpdate,
    ct_schedule,
    default_schedule,
    flat_schedule,
    hierarchical_estimate,
    mr_schedule,
    partition_into_sets,
    refine_point,
    run_iteration,
)
