"""Linear intensity curriculum.

Intensities are drawn from ``[c_min, c)``. After each epoch ``c`` grows by
``step`` (capped at ``c_max``) when the epoch loss improved. Training starts
with ``c = c_min``, i.e. on clean images for the default range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class CurriculumState:
    c_current: float = 0.0
    c_min: float = 0.0
    c_max: float = 1.0
    step: float = 0.1
    best_loss: float | None = None
    improvement_mode: str = "best"

    def __post_init__(self):
        if self.improvement_mode not in ("best", "previous"):
            raise ValueError(f"improvement_mode must be 'best' or 'previous', got {self.improvement_mode!r}")
        if not self.c_min <= self.c_max:
            raise ValueError(f"c_min={self.c_min} exceeds c_max={self.c_max}")
        if self.step <= 0:
            raise ValueError("curriculum step must be positive")
        self.c_current = min(max(self.c_current, self.c_min), self.c_max)

    @classmethod
    def start(cls, c_min=0.0, c_max=1.0, step=0.1, improvement_mode="best"):
        return cls(c_current=c_min, c_min=c_min, c_max=c_max, step=step, improvement_mode=improvement_mode)


def sample_intensity(state, rng):
    """Uniform draw from ``[c_min, c_current)``; returns ``c_min`` when the interval is empty."""
    if state.c_current <= state.c_min:
        return float(state.c_min)
    return float(rng.uniform(state.c_min, state.c_current))


def update(state, epoch_loss):
    """Advance ``c`` by one step when ``epoch_loss`` improved. Mutates and returns ``state``."""
    epoch_loss = float(epoch_loss)
    if not math.isfinite(epoch_loss):
        raise ValueError(f"curriculum update got a non-finite loss: {epoch_loss}")
    improved = state.best_loss is None or epoch_loss < state.best_loss
    if improved:
        # round away float drift so ten 0.1-steps land exactly on 1.0
        state.c_current = min(round(state.c_current + state.step, 10), state.c_max)
    if state.improvement_mode == "previous" or improved:
        state.best_loss = epoch_loss
    return state
