"""
Utility functions for time grids, seeds, thread counts and formatting.
"""

import os
from typing import List, Optional, Sequence

import numpy as np

from rcmlab.exceptions import OffGridError

__all__ = [
    "GRID_TOLERANCE",
    "derive_seed",
    "geometric_ladder",
    "steps_for",
    "snap_times",
    "format_duration",
    "resolve_threads",
]

# Relative slack when deciding whether a time sits on the dt grid
GRID_TOLERANCE = 1e-9

MAX_THREADS = 256


def derive_seed(master_seed: int, *path: int) -> int:
    """
    Derive an independent stream seed from a master seed and a replicate path.

    Args:
        master_seed: Seed of the whole run
        *path: Replicate index and optional sub-stream indices

    Returns:
        64-bit integer seed, identical for identical arguments
    """
    if master_seed < 0:
        raise ValueError(f"Seed must be non-negative, got {master_seed}")
    sequence = np.random.SeedSequence([master_seed, *path])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def steps_for(t: float, dt: float, strict: bool = False) -> int:
    """
    Number of Euler steps of size dt that reach time t.

    Args:
        t: Time (>= 0)
        dt: Time step (> 0)
        strict: Reject times that are not integer multiples of dt

    Returns:
        round(t / dt)

    Raises:
        ValueError: If t < 0 or dt <= 0
        OffGridError: If strict and t is off the dt grid
    """
    if dt <= 0:
        raise ValueError(f"Time step must be positive, got dt={dt}")
    if t < 0:
        raise ValueError(f"Times must be non-negative, got t={t}")
    ratio = t / dt
    steps = int(round(ratio))
    if strict and abs(ratio - steps) > GRID_TOLERANCE * max(1.0, ratio):
        raise OffGridError(f"t={t} is not an integer multiple of dt={dt}")
    return steps


def snap_times(times: Sequence[float], dt: float) -> List[float]:
    """Snap times to the dt grid, dropping duplicates created by snapping."""
    snapped = sorted({steps_for(t, dt) for t in times})
    return [n * dt for n in snapped]


def geometric_ladder(
    start: float, stop: float, points: int, dt: Optional[float] = None
) -> List[float]:
    """
    Geometrically spaced times from start to stop inclusive.

    Args:
        start: First time (> 0)
        stop: Last time (>= start)
        points: Number of ladder rungs before snapping (>= 2)
        dt: If given, snap rungs to the dt grid and drop duplicates

    Returns:
        Increasing list of times
    """
    if start <= 0 or stop < start:
        raise ValueError(f"Ladder needs 0 < start <= stop, got start={start}, stop={stop}")
    if points < 2:
        raise ValueError(f"Ladder needs at least 2 points, got {points}")
    times = [float(t) for t in np.geomspace(start, stop, points)]
    if dt is not None:
        return snap_times(times, dt)
    return times


def format_duration(seconds: float) -> str:
    """
    Format a wall time in seconds as a short human-readable string.

    Args:
        seconds: Duration in seconds

    Returns:
        e.g. "250ms", "4.20s", "3m 12.0s", "1h 5m"
    """
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.2f}s"
    if seconds < 3600:
        return f"{int(seconds // 60)}m {seconds % 60:.1f}s"
    return f"{int(seconds // 3600)}h {int((seconds % 3600) // 60)}m"


def resolve_threads(threads: Optional[int]) -> int:
    """
    Validate a worker count, defaulting to the available cores.

    Raises:
        ValueError: If threads is outside 1-256
    """
    if threads is None:
        return min(os.cpu_count() or 1, MAX_THREADS)
    if threads < 1:
        raise ValueError("Thread count must be at least 1")
    if threads > MAX_THREADS:
        raise ValueError(f"Thread count cannot exceed {MAX_THREADS}")
    return threads
