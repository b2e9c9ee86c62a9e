"""Counter-based random streams keyed by (seed, trajectory, step, slot).

Every draw is a pure function of its key, so a trajectory's path does not
depend on how trajectories are batched or which thread advances them.
Slot 0 is the exponential clock, slot 1 the map choice.
"""

from __future__ import annotations

import numpy as np

from . import kernels

SLOT_CLOCK = 0
SLOT_CHOICE = 1

_U64 = (1 << 64) - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def uniforms(seed: int, traj, step: int, slot: int) -> np.ndarray:
    return kernels.keyed_uniforms(check_seed(seed), np.asarray(traj, dtype=np.uint64), int(step), int(slot))


class KeyedStream:
    """Per-trajectory view of the keyed generator; ``step`` advances on each transition."""

    def __init__(self, seed: int, traj: int = 0, step: int = 0):
        self.seed = check_seed(seed)
        self.traj = int(traj)
        self.step = int(step)

    def uniform(self, slot: int) -> float:
        return float(uniforms(self.seed, np.array([self.traj]), self.step, slot)[0])

    def advance(self) -> int:
        current = self.step
        self.step += 1
        return current

    def __repr__(self):
        return f"KeyedStream(seed={self.seed}, traj={self.traj}, step={self.step})"
