"""Shared domain types: joint vectors, observations, trajectories, history windows.

Everything internal is radians / radians-per-second / meters; degree and
centimeter conversions happen only at the reporting boundary.  All types here
are immutable values and safe to share between threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

JOINT_NAMES = ("swing", "boom", "arm", "bucket")
N_JOINTS = 4
OBS_DIM = 8
DT = 0.05  # 20 Hz control tick


def _check_finite(name: str, values) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} has non-finite components: {values}")


def seed_list(seed, *extra) -> list:
    """Normalize a scalar or composite seed and append stream-splitting tags."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [int(e) for e in extra]


@dataclass(frozen=True)
class JointVector:
    """Angles (or angle-shaped quantities) for the four joints, in radians.

    Reused for reference positions, desired positions, policy adjustments and
    normalized PWM commands; the units follow the role, the shape is always 4.
    """

    swing: float
    boom: float
    arm: float
    bucket: float

    def __post_init__(self):
        _check_finite("JointVector", (self.swing, self.boom, self.arm, self.bucket))

    @classmethod
    def from_array(cls, a) -> "JointVector":
        a = np.asarray(a, dtype=float)
        if a.shape != (N_JOINTS,):
            raise ValueError(f"expected 4 components, got shape {a.shape}")
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.swing, self.boom, self.arm, self.bucket], dtype=np.float64)


ZERO_JOINTS = JointVector(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Observation:
    """Joint angles plus angular velocities; flattens to 8 values (q then qdot)."""

    q: JointVector
    qdot: JointVector

    @classmethod
    def from_array(cls, a) -> "Observation":
        a = np.asarray(a, dtype=float)
        if a.shape != (OBS_DIM,):
            raise ValueError(f"expected 8 components, got shape {a.shape}")
        return cls(JointVector.from_array(a[:4]), JointVector.from_array(a[4:]))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.q.as_array(), self.qdot.as_array()])


@dataclass(frozen=True)
class Trajectory:
    """Reference positions sampled at a fixed rate (default 20 Hz).

    max_step is the per-joint bound on consecutive point differences; the
    generator re-times cycles so it always holds.
    """

    dt: float
    points: tuple
    id: Optional[str] = None
    max_step: float = 0.05

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.points) < 2:
            raise ValueError(f"trajectory needs at least 2 points, got {len(self.points)}")
        arr = self.points_array()
        _check_finite("trajectory", arr)
        step = np.abs(np.diff(arr, axis=0)).max()
        if step > self.max_step + 1e-12:
            raise ValueError(
                f"per-step delta {step:.4f} rad exceeds max_step {self.max_step} (id={self.id})"
            )

    def __len__(self) -> int:
        return len(self.points)

    def points_array(self) -> np.ndarray:
        return np.stack([p.as_array() for p in self.points])

    @classmethod
    def from_array(cls, dt: float, arr, id: Optional[str] = None,
                   max_step: float = 0.05) -> "Trajectory":
        pts = tuple(JointVector.from_array(row) for row in np.asarray(arr, dtype=float))
        return cls(dt=dt, points=pts, id=id, max_step=max_step)


@dataclass(frozen=True)
class HistoryWindow:
    """The h+1 most recent observations and reference positions (oldest first)."""

    obs: tuple
    refs: tuple

    def __post_init__(self):
        if len(self.obs) != len(self.refs):
            raise ValueError(
                f"observation/reference history lengths differ: {len(self.obs)} vs {len(self.refs)}"
            )
        if len(self.obs) < 2:
            raise ValueError("history window needs at least h+1 = 2 entries")

    @property
    def h(self) -> int:
        return len(self.obs) - 1


def pad_prefix(prefix: Sequence, h: int):
    """Left-pad a short prefix with its first element until it has h+1 entries."""
    if len(prefix) == 0:
        raise ValueError("cannot pad an empty prefix")
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    items = list(prefix)
    if len(items) > h + 1:
        items = items[-(h + 1):]
    pad = [items[0]] * (h + 1 - len(items))
    return tuple(pad + items)


def pad_history(obs_prefix: Sequence[Observation], ref_prefix: Sequence[JointVector],
                h: int) -> HistoryWindow:
    """Build a full window from trajectory-start prefixes, padding with the first entries."""
    return HistoryWindow(obs=pad_prefix(obs_prefix, h), refs=pad_prefix(ref_prefix, h))


def shift_window(window: HistoryWindow, new_obs: Observation,
                 new_ref: JointVector) -> HistoryWindow:
    """Drop the oldest entry and append the newest; length is preserved."""
    return HistoryWindow(obs=window.obs[1:] + (new_obs,), refs=window.refs[1:] + (new_ref,))


def model_input_dim(h: int) -> int:
    """Flat input width of the dynamics model: 8(h+1) obs + 4(h+1) refs + 4 next-ref."""
    return 12 * h + 16


def policy_input_dim(h: int) -> int:
    """Flat input width of the adjustment policy: 8(h+1) obs + 4(h+1) refs + 4h future."""
    return 16 * h + 12


def flatten_inputs(window: HistoryWindow, extras: Sequence[JointVector]) -> np.ndarray:
    """Pack a window plus extra joint vectors into the fixed flat layout.

    Layout (oldest history first): all observations (8 values each), then all
    reference positions (4 each), then the extras in order.  The layout is the
    portability contract for checkpoints, so it must never change.
    """
    parts = [o.flat() for o in window.obs]
    parts += [r.as_array() for r in window.refs]
    parts += [e.as_array() for e in extras]
    return np.concatenate(parts)
