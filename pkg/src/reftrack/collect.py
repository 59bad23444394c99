"""Closed-loop data collection: PD tracking runs with noise, a policy, or neither.

A "run" is one pass of the PD loop over one reference trajectory.  Per step t
the recorded transition is {o_t, qr_{t+1}, qstar_{t+1}, u_t, done}; the last
step holds the terminal reference (qstar past the end repeats the final
point), so a trajectory of L points yields exactly L transitions.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Trajectory, seed_list
from .netlib import NetworkParams, forward
from .plant import PdGains, Plant, PlantConfig, pd_control


@dataclass(frozen=True)
class Transition:
    traj_id: int
    t: int
    obs: tuple
    qr_next: tuple
    qstar_next: tuple
    u: tuple
    done: bool


class TrajectoryRun:
    """Transition arrays for one pass over one reference trajectory."""

    def __init__(self, source_id: str, sigma: float, obs, qr_next, qstar_next, u):
        self.source_id = source_id
        self.sigma = float(sigma)
        self.obs = np.asarray(obs, dtype=np.float64)
        self.qr_next = np.asarray(qr_next, dtype=np.float64)
        self.qstar_next = np.asarray(qstar_next, dtype=np.float64)
        self.u = np.asarray(u, dtype=np.float64)
        if not (len(self.obs) == len(self.qr_next) == len(self.qstar_next) == len(self.u)):
            raise ValueError("misaligned transition arrays")

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def clean(self) -> bool:
        return self.sigma == 0.0

    def qr_time(self) -> np.ndarray:
        """Reference position indexed by time: qr_0 = qstar_0, then the recorded qr_{t+1}."""
        out = np.empty_like(self.qr_next)
        out[0] = self.obs[0, :4]  # env resets exactly onto qstar_0
        out[1:] = self.qr_next[:-1]
        return out

    def qstar_time(self) -> np.ndarray:
        out = np.empty_like(self.qstar_next)
        out[0] = self.obs[0, :4]
        out[1:] = self.qstar_next[:-1]
        return out

    def transitions(self, traj_id: int):
        last = len(self) - 1
        for t in range(len(self)):
            yield Transition(
                traj_id=traj_id, t=t,
                obs=tuple(self.obs[t]), qr_next=tuple(self.qr_next[t]),
                qstar_next=tuple(self.qstar_next[t]), u=tuple(self.u[t]),
                done=t == last,
            )


@dataclass
class Dataset:
    runs: list
    meta: dict = field(default_factory=dict)

    def size(self) -> int:
        return int(sum(len(r) for r in self.runs))

    def sigmas(self):
        return [r.sigma for r in self.runs]

    def transitions(self):
        for gid, run in enumerate(self.runs):
            yield from run.transitions(gid)


class _NoAdjust:
    def reset(self, traj):
        pass

    def step(self, t, o_t, qr_t):
        return np.zeros(4)


class _NoiseAdjust:
    """Clipped Gaussian perturbation of the desired position, per joint per step."""

    def __init__(self, sigma: float, rng):
        self.sigma = float(sigma)
        self.rng = rng

    def reset(self, traj):
        pass

    def step(self, t, o_t, qr_t):
        d = self.rng.normal(0.0, self.sigma, size=4) if self.sigma > 0 else np.zeros(4)
        return np.clip(d, -self.sigma, self.sigma)


class PolicyAdjust:
    """Runs the adjustment policy online, maintaining its history windows.

    Histories hold h+1 entries padded with the initial values, matching the
    training-time padding; the future window holds the next h desired points
    (the final point repeats past the end of the trajectory).
    """

    def __init__(self, params: NetworkParams, h: int):
        self.params = params
        self.h = h

    def reset(self, traj: Trajectory):
        pts = traj.points_array()
        self._pts = pts
        o0 = np.concatenate([pts[0], np.zeros(4)])
        self._o_hist = [o0] * (self.h + 1)
        self._qr_hist = [pts[0].copy()] * (self.h + 1)
        self._fut = [pts[min(k, len(pts) - 1)] for k in range(1, self.h + 1)]

    def step(self, t, o_t, qr_t):
        self._o_hist = self._o_hist[1:] + [o_t]
        self._qr_hist = self._qr_hist[1:] + [qr_t]
        x = np.concatenate(self._o_hist + self._qr_hist + self._fut)
        a = forward(self.params, x)
        self._fut = self._fut[1:] + [self._pts[min(t + 1 + self.h, len(self._pts) - 1)]]
        return a


def run_closed_loop(plant: Plant, gains: PdGains, traj: Trajectory, adjuster) -> TrajectoryRun:
    """Track one trajectory with the PD loop; the adjuster perturbs each reference."""
    pts = traj.points_array()
    length = len(pts)
    plant.reset(pts[0], episode_len=length)
    adjuster.reset(traj)
    q_prev = pts[0].copy()
    qr_t = pts[0].copy()
    obs = np.empty((length, 8))
    qr_rec = np.empty((length, 4))
    qstar_rec = np.empty((length, 4))
    u_rec = np.empty((length, 4))
    for t in range(length):
        o_t = plant.observation()
        q_t = o_t[:4]
        qstar_next = pts[min(t + 1, length - 1)]
        qr_next = qstar_next + adjuster.step(t, o_t, qr_t)
        u = pd_control(q_t, q_prev, qr_next, qr_t, gains, dt=traj.dt)
        done = plant.step(u)
        obs[t] = o_t
        qr_rec[t] = qr_next
        qstar_rec[t] = qstar_next
        u_rec[t] = u
        q_prev = q_t.copy()
        qr_t = qr_next
    assert done
    sigma = getattr(adjuster, "sigma", 0.0)
    return TrajectoryRun(traj.id or "", sigma, obs, qr_rec, qstar_rec, u_rec)


def collect_trajectory(plant_cfg: PlantConfig, gains: PdGains, traj: Trajectory,
                       sigma: float, seed) -> TrajectoryRun:
    """One noisy (or clean, sigma=0) PD pass; deterministic in the seed."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    return run_closed_loop(Plant(plant_cfg), gains, traj, _NoiseAdjust(sigma, rng))


def _collect_one(args):
    plant_cfg, gains, traj, sigma, seed = args
    return collect_trajectory(plant_cfg, gains, traj, sigma, seed)


def collect_dataset(trajs, plant_cfg: PlantConfig, gains: PdGains, sigma_max: float,
                    noise_ratio=(9, 2), seed=0, threads: int = 1,
                    meta: Optional[dict] = None) -> Dataset:
    """Mixed-noise dataset: per trajectory, noisy passes (sigma uniform in
    (0, sigma_max]) followed by clean passes, per the configured ratio."""
    if not trajs:
        raise ValueError("no reference trajectories to collect from")
    if sigma_max < 0:
        raise ValueError(f"sigma_max must be >= 0, got {sigma_max}")
    noisy_passes, clean_passes = noise_ratio
    jobs = []
    for ti, traj in enumerate(trajs):
        for p in range(noisy_passes + clean_passes):
            pass_seed = seed_list(seed, 0xC011EC7, ti, p)
            if p < noisy_passes:
                draw = np.random.default_rng(pass_seed + [1]).random()
                sigma = sigma_max * (1.0 - draw)  # uniform in (0, sigma_max]
            else:
                sigma = 0.0
            jobs.append((plant_cfg, gains, traj, sigma, pass_seed))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(_collect_one, jobs))
    else:
        runs = [_collect_one(j) for j in jobs]
    info = {
        "seed": seed_list(seed)[0],
        "sigma_max": float(sigma_max),
        "noise_ratio": f"{noisy_passes}:{clean_passes}",
    }
    info.update(meta or {})
    return Dataset(runs=runs, meta=info)


def collect_with_policy(trajs, policy: NetworkParams, h: int, plant_cfg: PlantConfig,
                        gains: PdGains, threads: int = 1,
                        meta: Optional[dict] = None) -> Dataset:
    """One noise-free pass per trajectory with the policy adjusting references."""
    if not trajs:
        raise ValueError("no reference trajectories to collect from")

    def one(traj):
        return run_closed_loop(Plant(plant_cfg), gains, traj, PolicyAdjust(policy, h))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, trajs))
    else:
        runs = [one(t) for t in trajs]
    info = {"noise_ratio": "policy", "sigma_max": 0.0}
    info.update(meta or {})
    return Dataset(runs=runs, meta=info)


def replay_check(dataset: Dataset, plant_cfg: PlantConfig) -> None:
    """Re-simulate every run from its recorded commands; observations must
    reproduce bit-exactly, or the dataset is internally inconsistent."""
    for gid, run in enumerate(dataset.runs):
        plant = Plant(plant_cfg)
        plant.reset(run.obs[0, :4], episode_len=len(run))
        for t in range(len(run)):
            o = plant.observation()
            if not np.array_equal(o, run.obs[t]):
                raise AssertionError(
                    f"replay mismatch in group {gid} ({run.source_id}) at step {t}"
                )
            plant.step(run.u[t])
