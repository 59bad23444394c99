"""Synthetic 4-joint excavator-like plant and the PD loop that drives it.

Each joint is a first-order velocity actuator (gain k, time constant tau)
behind a command delay line and a velocity-dependent dead zone, with cross
command bleed between joints, gravity sag on boom and arm, and swing inertia
that grows with arm extension.  Parameter values are stand-ins tuned so the
PD baseline lands at a few degrees of tracking error; none of them describe a
real machine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DT, N_JOINTS


@dataclass(frozen=True)
class PlantConfig:
    gain: tuple = (1.2, 1.0, 1.2, 1.4)              # rad/s per unit command
    tau: tuple = (0.15, 0.2, 0.15, 0.1)             # s
    deadzone: tuple = (0.03, 0.05, 0.05, 0.04)      # unit command half-width
    delay: tuple = (2, 2, 2, 1)                     # control ticks
    vel_limit: tuple = (0.8, 0.65, 0.7, 1.0)        # rad/s
    pos_min: tuple = (-2.0, -1.2, 0.0, -1.2)        # rad
    pos_max: tuple = (2.0, 0.6, 2.0, 1.6)           # rad
    gravity_sag: float = 0.15                       # rad/s^2 on boom (half on arm)
    swing_inertia: float = 0.5                      # swing accel 1/(1 + c_s * reach)
    cross_bleed: float = 0.05                       # command bleed between joints
    actuator_noise: float = 0.0                     # command noise std; off by default
    substeps: int = 5
    dt: float = DT
    link_lengths: tuple = (3.7, 1.8, 0.9)           # boom, arm, bucket (m)
    base_offset: tuple = (0.2, 1.0)                 # boom pivot (radial, height) (m)

    def __post_init__(self):
        if any(t <= 0 for t in self.tau):
            raise ValueError("tau must be positive")
        if any(d < 0 for d in self.deadzone):
            raise ValueError("deadzone must be non-negative")
        if any(d < 0 for d in self.delay):
            raise ValueError("delay must be non-negative")
        if any(lo >= hi for lo, hi in zip(self.pos_min, self.pos_max)):
            raise ValueError("position limits must be ordered")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class PdGains:
    kp: tuple = (4.0, 4.5, 4.5, 4.0)   # unit command per rad
    kd: tuple = (0.3, 0.35, 0.35, 0.3)  # unit command per rad/s

    def __post_init__(self):
        if any(g < 0 for g in self.kp) or any(g < 0 for g in self.kd):
            raise ValueError("PD gains must be non-negative")


def pd_control(q_t, q_prev, qr_next, qr_t, gains: PdGains, dt: float = DT) -> np.ndarray:
    """Position PD on the next reference with backward-difference rate terms.

    u = clamp(Kp (qr_{t+1} - q_t) + Kd ((qr_{t+1} - qr_t) - (q_t - q_{t-1})) / dt, -1, 1)
    """
    q_t = np.asarray(q_t, dtype=np.float64)
    q_prev = np.asarray(q_prev, dtype=np.float64)
    qr_next = np.asarray(qr_next, dtype=np.float64)
    qr_t = np.asarray(qr_t, dtype=np.float64)
    u = (np.asarray(gains.kp) * (qr_next - q_t)
         + np.asarray(gains.kd) * ((qr_next - qr_t) - (q_t - q_prev)) / dt)
    return np.clip(u, -1.0, 1.0)


def forward_kinematics(q, config: PlantConfig = PlantConfig()):
    """End-effector position (x, y, z) in meters for joint angles q.

    Planar boom/arm/bucket chain in the vertical plane, swung about the
    vertical axis; the boom pivot sits at (radial, height) = base_offset.
    """
    q = np.asarray(q, dtype=np.float64)
    lb, la, lk = config.link_lengths
    x0, z0 = config.base_offset
    a1 = q[..., 1]
    a2 = q[..., 1] + q[..., 2]
    a3 = q[..., 1] + q[..., 2] + q[..., 3]
    r = x0 + lb * np.cos(a1) + la * np.cos(a2) + lk * np.cos(a3)
    z = z0 + lb * np.sin(a1) + la * np.sin(a2) + lk * np.sin(a3)
    x = np.cos(q[..., 0]) * r
    y = np.sin(q[..., 0]) * r
    return np.stack([x, y, z], axis=-1)


def _reach_fraction(q, config: PlantConfig) -> float:
    """Radial arm extension normalized to [0, 1] (swing-independent)."""
    lb, la, lk = config.link_lengths
    x0, _ = config.base_offset
    a1 = q[1]
    a2 = q[1] + q[2]
    a3 = q[1] + q[2] + q[3]
    r = x0 + lb * np.cos(a1) + la * np.cos(a2) + lk * np.cos(a3)
    r_max = x0 + lb + la + lk
    return float(np.clip(r / r_max, 0.0, 1.0))


class Plant:
    """One mutable closed-loop plant instance (single-threaded by design).

    With config.actuator_noise > 0 each incoming command is perturbed by a
    seeded Gaussian of that standard deviation; the default plant is exactly
    deterministic.
    """

    def __init__(self, config: PlantConfig = PlantConfig(), noise_seed: int = 0):
        self.config = config
        self._noise_seed = noise_seed
        self._noise_rng = None
        self._pos_min = np.asarray(config.pos_min, dtype=np.float64)
        self._pos_max = np.asarray(config.pos_max, dtype=np.float64)
        self._vmax = np.asarray(config.vel_limit, dtype=np.float64)
        self._gain = np.asarray(config.gain, dtype=np.float64)
        self._tau = np.asarray(config.tau, dtype=np.float64)
        self._dz = np.asarray(config.deadzone, dtype=np.float64)
        self.q = np.zeros(N_JOINTS)
        self.qdot = np.zeros(N_JOINTS)
        self.tick = 0
        self.episode_len = None
        self._delay_buf = [np.zeros(d) for d in config.delay]

    def reset(self, q0, episode_len=None) -> np.ndarray:
        q0 = np.asarray(q0, dtype=np.float64)
        if np.any(q0 < self._pos_min) or np.any(q0 > self._pos_max):
            raise ValueError(f"reset position {q0} outside limits "
                             f"[{self.config.pos_min}, {self.config.pos_max}]")
        self.q = q0.copy()
        self.qdot = np.zeros(N_JOINTS)
        self.tick = 0
        self.episode_len = episode_len
        self._delay_buf = [np.zeros(d) for d in self.config.delay]
        if self.config.actuator_noise > 0:
            self._noise_rng = np.random.default_rng([self._noise_seed, 0xAC])
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    def step(self, u) -> bool:
        u = np.asarray(u, dtype=np.float64)
        if not np.all(np.isfinite(u)):
            raise ValueError(f"non-finite command {u}")
        cfg = self.config
        if cfg.actuator_noise > 0:
            u = u + self._noise_rng.normal(0.0, cfg.actuator_noise, size=N_JOINTS)

        # delay lines (FIFO per joint; d=0 passes through)
        c = np.empty(N_JOINTS)
        for i, buf in enumerate(self._delay_buf):
            if buf.size == 0:
                c[i] = u[i]
            else:
                c[i] = buf[0]
                buf[:-1] = buf[1:]
                buf[-1] = u[i]

        # state-dependent dead zone, evaluated once per control tick
        widths = self._dz * (1.0 + 0.5 * np.abs(self.qdot) / self._vmax)
        c = np.sign(c) * np.maximum(np.abs(c) - widths, 0.0)

        # cross-command bleed
        c = c + cfg.cross_bleed * (c.sum() - c)

        sub_dt = cfg.dt / cfg.substeps
        cg = cfg.gravity_sag
        for _ in range(cfg.substeps):
            acc = (self._gain * c - self.qdot) / self._tau
            acc[1] -= cg * np.cos(self.q[1])
            acc[2] -= 0.5 * cg * np.cos(self.q[1] + self.q[2])
            acc[0] /= 1.0 + cfg.swing_inertia * _reach_fraction(self.q, cfg)
            # semi-implicit Euler: velocity first, then position with the new velocity
            self.qdot = np.clip(self.qdot + acc * sub_dt, -self._vmax, self._vmax)
            self.q = self.q + self.qdot * sub_dt
            hit_lo = self.q < self._pos_min
            hit_hi = self.q > self._pos_max
            if hit_lo.any() or hit_hi.any():
                self.q = np.clip(self.q, self._pos_min, self._pos_max)
                self.qdot[hit_lo | hit_hi] = 0.0

        self.tick += 1
        return self.episode_len is not None and self.tick >= self.episode_len


def step_response(config: PlantConfig, joint: int, u_mag: float, duration: float,
                  decoupled: bool = False, substeps: int = None):
    """Constant-command response of one joint; returns (t, q, qdot) arrays.

    decoupled=True strips delay, dead zone, coupling and gravity so the
    response can be checked against the first-order closed form.
    """
    if decoupled:
        config = PlantConfig(
            gain=config.gain, tau=config.tau,
            deadzone=(0.0,) * 4, delay=(0,) * 4,
            vel_limit=config.vel_limit, pos_min=config.pos_min, pos_max=config.pos_max,
            gravity_sag=0.0, swing_inertia=0.0, cross_bleed=0.0,
            substeps=substeps or config.substeps, dt=config.dt,
            link_lengths=config.link_lengths, base_offset=config.base_offset,
        )
    elif substeps is not None:
        raise ValueError("substeps override only makes sense with decoupled=True")
    plant = Plant(config)
    mid = 0.5 * (np.asarray(config.pos_min) + np.asarray(config.pos_max))
    q0 = np.zeros(N_JOINTS)
    q0[1:] = mid[1:]  # start away from limits for the articulated joints
    plant.reset(q0)
    u = np.zeros(N_JOINTS)
    u[joint] = u_mag
    n = int(round(duration / config.dt))
    t = np.arange(n + 1) * config.dt
    qs = [plant.q.copy()]
    vs = [plant.qdot.copy()]
    for _ in range(n):
        plant.step(u)
        qs.append(plant.q.copy())
        vs.append(plant.qdot.copy())
    return t, np.stack(qs), np.stack(vs)
