"""Step rewards and return-to-go targets.

Every non-terminal step of an episode of length T earns 1/T; the terminal
step earns 0 on success and 1 on failure. Summing from t to T gives a
return-to-go of (T-t)/T for success and (T-t)/T + 1 for failure, so
successful episodes live in [0, 1) and failed ones in [1, 2), separated
by a constant margin of 1.0 at every step. Returns are undiscounted.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RewardSchedule:
    """Reward layout for one labeled episode: length T and terminal outcome."""

    T: int
    success: bool

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError(f"episode length must be >= 1, got T={self.T}")


def _check_index(t: int, T: int) -> None:
    if not 0 <= t <= T:
        raise ValueError(f"step index t={t} outside [0, {T}]")


def reward(sched: RewardSchedule, t: int) -> float:
    """Per-step reward: 1/T before the terminal step, outcome bonus at t=T."""
    _check_index(t, sched.T)
    if t < sched.T:
        return 1.0 / sched.T
    return 0.0 if sched.success else 1.0


def return_to_go(sched: RewardSchedule, t: int) -> float:
    """Remaining reward from step t: (T-t)/T, shifted up by 1 on failure."""
    _check_index(t, sched.T)
    base = (sched.T - t) / sched.T
    return base if sched.success else base + 1.0


def margin(t: int, T: int) -> float:
    """Failure-minus-success gap of the return at step t (constant 1.0)."""
    _check_index(t, T)
    fail = return_to_go(RewardSchedule(T=T, success=False), t)
    succ = return_to_go(RewardSchedule(T=T, success=True), t)
    return fail - succ
