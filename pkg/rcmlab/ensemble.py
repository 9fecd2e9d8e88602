"""
Replicate worker pool with per-replicate seeds and index-ordered reductions.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Generic, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from rcmlab.exceptions import RcmLabError
from rcmlab.utils import derive_seed, resolve_threads

__all__ = [
    "EnsembleConfig",
    "EnsembleStats",
    "ReplicateOutcome",
    "EnsembleRunner",
    "mean_and_stderr",
    "root_moment",
]

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class EnsembleConfig:
    """Configuration for a batch of independent replicates."""

    reps: int
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        """Validate configuration after initialization."""
        if self.reps < 1:
            raise ValueError("At least one replicate is required")
        if self.seed < 0:
            raise ValueError("Seed must be non-negative")
        self.threads = resolve_threads(self.threads)


@dataclass
class EnsembleStats:
    """Statistics for a completed ensemble run."""

    total: int = 0
    succeeded: int = 0
    failed: int = 0
    start_time: float = field(default_factory=time.time)
    end_time: float = 0.0

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def update(self, outcome: "ReplicateOutcome") -> None:
        self.total += 1
        if outcome.ok:
            self.succeeded += 1
        else:
            self.failed += 1


@dataclass
class ReplicateOutcome(Generic[T]):
    """Result or captured failure of one replicate."""

    index: int
    seed: int
    value: Optional[T] = None
    error: Optional[RcmLabError] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class EnsembleRunner:
    """
    Runs a replicate task over a thread pool.

    Each replicate receives its index and a seed derived from the master
    seed; outcomes are returned in index order whatever the completion order,
    so reductions do not depend on the number of threads.
    """

    def __init__(self, config: EnsembleConfig):
        self.config = config
        self.stats = EnsembleStats()

    def __repr__(self) -> str:
        return (
            f"EnsembleRunner(reps={self.config.reps}, "
            f"seed={self.config.seed}, "
            f"threads={self.config.threads})"
        )

    def seeds(self) -> List[int]:
        return [derive_seed(self.config.seed, i) for i in range(self.config.reps)]

    def run(
        self,
        task: Callable[[int, int], T],
        progress_callback: Optional[Callable[[int, int], None]] = None,
    ) -> List[ReplicateOutcome[T]]:
        """
        Run task(index, seed) for every replicate.

        Library errors (non-convergence, disconnected graphs, ...) are captured
        per replicate and counted; anything else propagates.

        Args:
            task: Replicate computation
            progress_callback: Optional callback(completed, total)

        Returns:
            Outcomes sorted by replicate index
        """
        self.stats = EnsembleStats()
        seeds = self.seeds()
        outcomes: List[ReplicateOutcome[T]] = []

        with ThreadPoolExecutor(max_workers=self.config.threads) as executor:
            future_to_index = {
                executor.submit(task, i, seed): i for i, seed in enumerate(seeds)
            }
            for future in as_completed(future_to_index):
                index = future_to_index[future]
                try:
                    outcome = ReplicateOutcome(index, seeds[index], value=future.result())
                except RcmLabError as e:
                    logger.warning("Replicate %d failed: %s", index, e)
                    outcome = ReplicateOutcome(index, seeds[index], error=e)

                self.stats.update(outcome)
                outcomes.append(outcome)
                if progress_callback:
                    progress_callback(self.stats.total, self.config.reps)

        self.stats.end_time = time.time()
        outcomes.sort(key=lambda o: o.index)
        return outcomes


def mean_and_stderr(samples: Sequence[float]) -> Tuple[float, float]:
    """
    Sample mean and standard error of the mean.

    The mean uses exactly rounded summation so that it does not depend on
    how the samples were produced; a single sample has zero stderr.
    """
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise ValueError("Cannot summarize an empty sample")
    mean = math.fsum(values) / values.size
    if values.size < 2:
        return mean, 0.0
    spread = math.fsum((values - mean) ** 2) / (values.size - 1)
    return mean, math.sqrt(spread / values.size)


def root_moment(mean: float, stderr: float, p: float) -> Tuple[float, float]:
    """
    Map an estimate M of a raw moment to M^(1/p) with a delta-method stderr.

    Returns:
        (M^(1/p), (1/p) M^(1/p - 1) stderr); the stderr is 0 when M is 0
    """
    if mean < 0:
        raise ValueError(f"Raw moment estimate must be non-negative, got {mean}")
    if mean == 0.0:
        return 0.0, 0.0
    rooted = mean ** (1.0 / p)
    return rooted, rooted / (p * mean) * stderr
