"""Cosine learning-rate schedule with warm restarts whose cycle length doubles."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SgdwrSchedule:
    eta_max: float = 1e-2
    eta_min: float = 1e-5
    t0: int = 10
    mult: int = 2
    cycles: int = 4

    def __post_init__(self):
        if not self.eta_max > self.eta_min > 0:
            raise ValueError(f"need eta_max > eta_min > 0, got {self.eta_max}, {self.eta_min}")
        if self.t0 < 1 or self.mult < 1 or self.cycles < 1:
            raise ValueError("t0, mult and cycles must be positive")

    @property
    def cycle_lengths(self) -> list[int]:
        return [self.t0 * self.mult ** i for i in range(self.cycles)]

    @property
    def total_epochs(self) -> int:
        return sum(self.cycle_lengths)

    @property
    def restarts(self) -> list[int]:
        """Epochs at which a cycle begins (the first is epoch 0)."""
        out, start = [], 0
        for n in self.cycle_lengths:
            out.append(start)
            start += n
        return out

    def locate(self, epoch: int) -> tuple[int, int]:
        """(cycle index, epoch offset within that cycle)."""
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside schedule of {self.total_epochs} epochs")
        for i, (start, n) in enumerate(zip(self.restarts, self.cycle_lengths)):
            if epoch < start + n:
                return i, epoch - start
        raise AssertionError("unreachable")


def lr_at(schedule: SgdwrSchedule, epoch: int, batch_fraction: float = 0.0) -> float:
    """Learning rate at ``epoch + batch_fraction``, with T_cur continuous inside a cycle."""
    if not 0.0 <= batch_fraction < 1.0:
        raise ValueError(f"batch_fraction must be in [0, 1), got {batch_fraction}")
    cycle, offset = schedule.locate(epoch)
    t_i = schedule.cycle_lengths[cycle]
    t_cur = offset + batch_fraction
    return schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * (1 + math.cos(math.pi * t_cur / t_i))
