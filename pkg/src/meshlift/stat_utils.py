from __future__ import annotations

import copy
import math
from typing import Iterable, List, NamedTuple


class Summary(NamedTuple):
    count: int
    mean: float
    standard_deviation: float
    minimum: float
    maximum: float
    non_finite: int


class OnlineStatistics:
    """
    Running mean, sample variance and range of a stream of measurements (PSNR, candidate costs, ...).

    Non-finite values, such as the infinite PSNR of an exact prediction, are counted in `non_finite`
    but kept out of the moments.
    """

    def __init__(self) -> None:
        self.current_count: int = 0
        self.current_mean: float = 0.0
        self.current_M2: float = 0.0
        self.minimum: float = math.inf
        self.maximum: float = -math.inf
        self.non_finite: int = 0

    @classmethod
    def from_values(cls, values: Iterable[float]) -> OnlineStatistics:
        stats = cls()
        for value in values:
            stats.add(value)
        return stats

    def add(self, value: float) -> None:
        """Welford update."""
        value = float(value)
        if not math.isfinite(value):
            self.non_finite += 1
            return
        self.current_count += 1
        delta = value - self.current_mean
        self.current_mean += delta / self.current_count
        self.current_M2 += delta * (value - self.current_mean)
        self.minimum = min(self.minimum, value)
        self.maximum = max(self.maximum, value)

    def mean(self) -> float:
        return self.current_mean

    def variance(self) -> float:
        """Sample variance."""
        if self.current_count < 2:
            raise ValueError(f"Cannot compute variance with only {self.current_count} observations.")
        return self.current_M2 / (self.current_count - 1)

    def standard_deviation(self) -> float:
        return math.sqrt(self.variance())

    def summary(self) -> Summary:
        deviation = self.standard_deviation() if self.current_count >= 2 else 0.0
        return Summary(self.current_count, self.current_mean, deviation, self.minimum, self.maximum, self.non_finite)

    @classmethod
    def merge_pair(cls, first: OnlineStatistics, second: OnlineStatistics) -> OnlineStatistics:
        """
        Combine two partial results (Chan et al.'s parallel update), e.g. from the point sets of one iteration.
        """
        count = first.current_count + second.current_count
        merged = cls()
        if count > 0:
            delta = second.current_mean - first.current_mean
            merged.current_count = count
            merged.current_mean = first.current_mean + delta * second.current_count / count
            merged.current_M2 = (
                first.current_M2 + second.current_M2 + delta**2 * first.current_count * second.current_count / count
            )
        merged.minimum = min(first.minimum, second.minimum)
        merged.maximum = max(first.maximum, second.maximum)
        merged.non_finite = first.non_finite + second.non_finite
        return merged

    @classmethod
    def merge(cls, stats_list: List[OnlineStatistics]) -> OnlineStatistics:
        if len(stats_list) == 0:
            raise ValueError("Cannot merge an empty list of statistics.")
        pending: List[OnlineStatistics] = copy.deepcopy(stats_list)
        # Pairwise tree reduction keeps the merged moments well conditioned
        while len(pending) > 1:
            pending = [
                cls.merge_pair(pending[i], pending[i + 1]) if i + 1 < len(pending) else pending[i]
                for i in range(0, len(pending), 2)
            ]
        return pending[0]
