"""
Wall-clock timing of forward pass plus post-processing.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

from src.utils.error_handling import ConfigError, ErrorContext

logger = logging.getLogger(__name__)


@dataclass
class TimingResult:
    mean_ms: float
    fps: float
    iterations: int
    warmup: int
    samples_ms: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean_ms": round(self.mean_ms, 3), "fps": round(self.fps, 3),
                "iterations": self.iterations, "warmup": self.warmup}


def timing_harness(run: Callable[[object], object], inputs: Sequence[object], warmup: int = 1,
                   iters: int = 5) -> TimingResult:
    """
    Time `run(input)` over the inputs, cycling through them.

    Warmup calls are executed but excluded from the mean. Inputs are
    expected to be preloaded so file I/O stays outside the measurement.
    """
    if iters < 1:
        raise ConfigError(f"timing needs at least one iteration, got {iters}", ErrorContext(operation="bench"))
    if not inputs:
        raise ConfigError("timing needs at least one input", ErrorContext(operation="bench"))

    for index in range(max(warmup, 0)):
        run(inputs[index % len(inputs)])

    samples = []
    for index in range(iters):
        start = time.perf_counter()
        run(inputs[index % len(inputs)])
        samples.append((time.perf_counter() - start) * 1000.0)

    mean_ms = sum(samples) / len(samples)
    fps = 1000.0 / mean_ms if mean_ms > 0 else float("inf")
    logger.info(f"Timing: {mean_ms:.2f} ms/image, {fps:.2f} FPS over {iters} iterations")
    return TimingResult(mean_ms=mean_ms, fps=fps, iterations=iters, warmup=max(warmup, 0), samples_ms=samples)
