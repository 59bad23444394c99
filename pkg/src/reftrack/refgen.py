"""Synthetic four-phase loading cycles used as reference trajectories.

A cycle visits jittered waypoints (start -> dig -> lift -> dump -> start)
with a zero-end-velocity cubic Hermite spline per phase, sampled at 20 Hz.
If a jittered cycle would move faster than the per-step bound, its duration
is stretched until it complies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .core import DT, JOINT_NAMES, Trajectory, seed_list

PHASE_NAMES = ("start", "dig", "lift", "dump", "return")


@dataclass(frozen=True)
class CycleSpec:
    # waypoints (swing, boom, arm, bucket); the cycle closes back on waypoint 0
    waypoints: tuple = (
        (0.0, -0.4, 0.6, 0.3),
        (0.0, -0.7, 1.2, 1.1),
        (1.2, -0.2, 0.8, 1.0),
        (1.4, -0.1, 0.5, -0.5),
    )
    phase_durations: tuple = (4.0, 5.0, 6.0, 5.0)   # s, dig/lift/dump/return
    keypoint_jitter: float = 0.1                    # rad, uniform per joint
    duration_jitter: float = 0.15                   # fractional, per phase
    total_jitter: float = 0.045                     # fractional, whole cycle
    dt: float = DT
    max_step: float = 0.05                          # rad per sample
    pos_min: tuple = (-2.0, -1.2, 0.0, -1.2)
    pos_max: tuple = (2.0, 0.6, 2.0, 1.6)

    def __post_init__(self):
        if len(self.phase_durations) != len(self.waypoints):
            raise ValueError("need one phase duration per waypoint transition")
        if any(d <= 0 for d in self.phase_durations):
            raise ValueError("phase durations must be positive")

    def check_feasible(self) -> None:
        """Every waypoint must clear the position limits by the jitter margin."""
        lo = np.asarray(self.pos_min)
        hi = np.asarray(self.pos_max)
        for k, wp in enumerate(self.waypoints):
            wp = np.asarray(wp, dtype=float)
            bad = (wp - self.keypoint_jitter < lo) | (wp + self.keypoint_jitter > hi)
            if bad.any():
                j = int(np.argmax(bad))
                raise ValueError(
                    f"keypoint {k} ({PHASE_NAMES[k]}) joint {JOINT_NAMES[j]}: "
                    f"{wp[j]:.3f} +- {self.keypoint_jitter} outside limits "
                    f"[{lo[j]}, {hi[j]}]"
                )


def _sample_cycle(points: np.ndarray, durations: np.ndarray, dt: float) -> np.ndarray:
    times = np.concatenate([[0.0], np.cumsum(durations)])
    spline = CubicHermiteSpline(times, points, np.zeros_like(points), axis=0)
    n = int(np.floor(times[-1] / dt)) + 1
    return spline(np.arange(n) * dt)


def generate(spec: CycleSpec, n: int, seed) -> list:
    """Deterministically generate n loading-cycle trajectories."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    spec.check_feasible()
    base = np.asarray(spec.waypoints, dtype=float)
    base_durations = np.asarray(spec.phase_durations, dtype=float)
    nominal_total = float(base_durations.sum())
    trajs = []
    for i in range(n):
        rng = np.random.default_rng(seed_list(seed, i))
        jit = rng.uniform(-spec.keypoint_jitter, spec.keypoint_jitter, size=base.shape)
        pts = base + jit
        pts = np.vstack([pts, pts[0]])  # close the cycle on the jittered start
        durations = base_durations * (
            1.0 + rng.uniform(-spec.duration_jitter, spec.duration_jitter,
                              size=base_durations.shape))
        total = nominal_total * (1.0 + rng.uniform(-spec.total_jitter, spec.total_jitter))
        durations *= total / durations.sum()
        samples = _sample_cycle(pts, durations, spec.dt)
        # stretch until the per-step bound holds (cubics overshoot velocity mid-phase)
        for _ in range(16):
            worst = np.abs(np.diff(samples, axis=0)).max()
            if worst <= spec.max_step:
                break
            durations *= (worst / spec.max_step) * 1.05
            samples = _sample_cycle(pts, durations, spec.dt)
        trajs.append(Trajectory.from_array(spec.dt, samples, id=f"cycle-{i:03d}",
                                           max_step=spec.max_step))
    return trajs


def split(trajs, n_train: int, n_test: int, seed):
    """Deterministic disjoint shuffle-split into (train, test)."""
    if n_train + n_test != len(trajs):
        raise ValueError(
            f"n_train + n_test = {n_train + n_test} does not match {len(trajs)} trajectories"
        )
    order = np.random.default_rng(seed_list(seed, 0x5B17)).permutation(len(trajs))
    train = [trajs[i] for i in order[:n_train]]
    test = [trajs[i] for i in order[n_train:]]
    return train, test
