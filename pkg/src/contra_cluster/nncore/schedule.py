"""Epoch-level learning-rate schedule: linear ramp then cosine annealing."""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ScheduleConfig:
    start_lr: float = 0.01
    peak_lr: float = 0.25
    final_lr: float = 0.05
    ramp_epochs: int = 10
    total_epochs: int = 100

    def __post_init__(self):
        if not 0 <= self.ramp_epochs <= self.total_epochs or self.total_epochs < 1:
            raise ValueError(f"need 0 <= ramp_epochs <= total_epochs, got {self.ramp_epochs}, {self.total_epochs}")


def lr_at(epoch, schedule=ScheduleConfig()):
    """Learning rate for a 0-based ``epoch``.

    Linear from ``start_lr`` at epoch 0 to ``peak_lr`` at ``ramp_epochs``,
    then cosine down to ``final_lr`` at ``total_epochs``. Endpoints are hit
    exactly: both phases are written as convex combinations.
    """
    if not isinstance(epoch, int) or isinstance(epoch, bool):
        raise TypeError("epoch must be an int")
    if epoch < 0 or epoch > schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    s = schedule
    if epoch < s.ramp_epochs:
        t = epoch / s.ramp_epochs
        return s.start_lr * (1.0 - t) + s.peak_lr * t
    span = s.total_epochs - s.ramp_epochs
    if span == 0:
        return s.peak_lr
    w = 0.5 * (1.0 + math.cos(math.pi * (epoch - s.ramp_epochs) / span))
    return s.final_lr * (1.0 - w) + s.peak_lr * w
