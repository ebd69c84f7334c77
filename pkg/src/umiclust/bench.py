"""Thread-scaling benchmark harness with a parallel-fraction fit.

Times an assignment-sweep-dominated workload at several thread counts,
takes the median of repeated identically-seeded runs, and fits the
parallel fraction P of the speedup model

    SpeedUp(n) = 1 / (P/n + (1 - P))

by least squares over the measured speedups. Timings cover the workload
only; data generation and I/O are excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .sampler import SamplerConfig, init_state, sample_assignments_parallel, step
from .rng import Streams
from . import rng as rngmod
from .state import CountMatrix

__all__ = ["BenchResult", "amdahl_speedup", "fit_parallel_fraction", "bench_scaling", "sweep_workload"]


@dataclass
class BenchResult:
    thread_counts: list[int]
    wall_ms: list[float]
    speedups: list[float]
    fitted_p: float | None

    def to_json_dict(self) -> dict:
        return {
            "thread_counts": self.thread_counts,
            "wall_ms": [round(t, 3) for t in self.wall_ms],
            "speedups": [round(s, 4) for s in self.speedups],
            "fitted_p": None if self.fitted_p is None else round(self.fitted_p, 4),
        }


def amdahl_speedup(n: np.ndarray, p: float) -> np.ndarray:
    return 1.0 / (p / n + (1.0 - p))


def fit_parallel_fraction(thread_counts: Sequence[int], speedups: Sequence[float]) -> float:
    """Least-squares fit of P in [0, 1] to the measured speedups."""
    n = np.asarray(thread_counts, dtype=np.float64)
    s = np.asarray(speedups, dtype=np.float64)

    def loss(p: float) -> float:
        return float(np.sum((amdahl_speedup(n, p) - s) ** 2))

    res = minimize_scalar(loss, bounds=(0.0, 1.0), method="bounded")
    return float(res.x)


def sweep_workload(matrix: CountMatrix, config: SamplerConfig, n_sweeps: int = 10) -> Callable[[int], None]:
    """A workload closure running repeated assignment sweeps on a fixed state.

    The state is prepared once (outside the timed region); each invocation
    redoes the data-parallel sweep n_sweeps times at the requested thread
    count with identical seeding.
    """
    streams = Streams(config.seed)
    state = init_state(matrix, config, streams)
    # a few regular iterations so the profile set is realistic
    for t in range(3):
        state, _ = step(state, matrix, config, streams, t)

    def workload(n_threads: int) -> None:
        for t in range(n_sweeps):
            sample_assignments_parallel(
                state, matrix, streams.get(rngmod.ASSIGN, 1000 + t), n_threads
            )

    return workload


def bench_scaling(
    workload: Callable[[int], None],
    thread_counts: Sequence[int] = (1, 2, 4, 8),
    repetitions: int = 3,
) -> BenchResult:
    """Median-of-repetitions timing of the workload at each thread count."""
    thread_counts = list(thread_counts)
    if not thread_counts or any(t < 1 for t in thread_counts):
        raise ValueError("thread counts must be positive")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    workload(thread_counts[0])  # warm up compiled kernels outside the timings
    wall_ms = []
    for n in thread_counts:
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            workload(n)
            times.append((time.perf_counter() - t0) * 1e3)
        wall_ms.append(float(np.median(times)))
    # speedups are relative to the first measurement; a leading thread
    # count of 1 gives the usual definition
    speedups = [wall_ms[0] / t for t in wall_ms]
    fitted = fit_parallel_fraction(thread_counts, speedups) if len(thread_counts) > 1 else None
    return BenchResult(
        thread_counts=thread_counts,
        wall_ms=wall_ms,
        speedups=speedups,
        fitted_p=fitted,
    )
