"""Throughput measurement for training and inference phases.

Speeds are reported in iterations per second, where an iteration is one
optimizer step (training) or one batch forward (inference). Wall time is
the median over repeated runs, which resists warm-up noise better than a
single measurement. Numbers are machine-local; the hardware descriptor is
recorded so no cross-machine comparability is implied.
"""

from __future__ import annotations

import math
import platform
import time
from dataclasses import dataclass
from statistics import median
from typing import Callable

import numpy as np

from .errors import ConsistencyError, ParameterError

PHASES = ("training", "inference")

# Columns of a throughput report row, after the model id.
PROFILE_COLUMNS = (
    "parameters",
    "output_dim",
    "inference_speed",
    "inference_seconds",
    "training_speed",
    "training_seconds",
)


@dataclass(frozen=True)
class ProfileRecord:
    """One measured phase; speed is definitionally iterations/seconds."""

    model_id: str
    phase: str
    iterations: int
    seconds: float
    speed: float

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ParameterError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if not self.seconds > 0:
            raise ParameterError(f"seconds must be positive, got {self.seconds}")
        expected = self.iterations / self.seconds
        if abs(self.speed - expected) > 1e-9 * max(expected, 1.0):
            raise ConsistencyError(
                f"speed {self.speed!r} disagrees with iterations/seconds {expected!r}"
            )

    @classmethod
    def measure(cls, model_id: str, phase: str, iterations: int, seconds: float):
        return cls(model_id, phase, iterations, seconds, iterations / seconds)


def planned_steps(n_rows: int, batch_size: int, epochs: int,
                  max_steps: int | None = None) -> int:
    """Optimizer steps a mini-batch loop will take over n_rows."""
    if n_rows < 1 or batch_size < 1 or epochs < 1:
        raise ParameterError("n_rows, batch_size and epochs must all be >= 1")
    total = epochs * math.ceil(n_rows / batch_size)
    if max_steps is not None:
        total = min(total, max_steps)
    return total


def _measure(task: Callable[[], int], repeats: int) -> tuple[int, float]:
    """Run task repeats times; return (iterations, median wall seconds)."""
    iterations = None
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        count = int(task())
        elapsed = time.perf_counter() - start
        if iterations is None:
            iterations = count
        elif count != iterations:
            raise ConsistencyError(
                f"task reported {count} iterations after reporting {iterations}; "
                "profiled work must be deterministic"
            )
        times.append(elapsed)
    # clock resolution floor keeps the speed finite on degenerate tasks
    return iterations, max(median(times), 1e-9)


def profile(pipeline, dataset, repeats: int = 3) -> tuple[ProfileRecord, ProfileRecord]:
    """Measure (training, inference) throughput of a pipeline on a dataset.

    The pipeline supplies the work through training_task/inference_task,
    each returning a zero-argument callable that performs one full phase
    pass and returns the iteration count it executed.
    """
    if repeats < 3:
        raise ParameterError(f"repeats must be >= 3, got {repeats}")
    training = pipeline.training_task(dataset)
    inference = pipeline.inference_task(dataset)
    train_iters, train_secs = _measure(training, repeats)
    infer_iters, infer_secs = _measure(inference, repeats)
    return (
        ProfileRecord.measure(pipeline.model_id, "training", train_iters, train_secs),
        ProfileRecord.measure(pipeline.model_id, "inference", infer_iters, infer_secs),
    )


def profile_row(training: ProfileRecord, inference: ProfileRecord,
                parameters: int, output_dim: int) -> dict:
    """One report row: model id plus the six throughput-table columns."""
    if training.model_id != inference.model_id:
        raise ConsistencyError(
            f"records describe different models: {training.model_id!r} "
            f"vs {inference.model_id!r}"
        )
    if (training.phase, inference.phase) != ("training", "inference"):
        raise ParameterError("profile_row expects a (training, inference) pair")
    return {
        "model_id": training.model_id,
        "parameters": int(parameters),
        "output_dim": int(output_dim),
        "inference_speed": inference.speed,
        "inference_seconds": inference.seconds,
        "training_speed": training.speed,
        "training_seconds": training.seconds,
    }


def hardware_descriptor() -> dict:
    """Where the numbers came from; recorded, never compared."""
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
