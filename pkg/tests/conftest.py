from dataclasses import replace

import pytest

from reftrack.config import RunConfig, desk_profile
from reftrack.refgen import CycleSpec
from reftrack.train import TrainConfig


def mini_config(seed=0) -> RunConfig:
    """Desk-like config shrunk until a full pipeline runs in seconds."""
    desk = desk_profile(seed=seed)
    cycle = CycleSpec(
        waypoints=desk.cycle.waypoints,
        phase_durations=(0.6, 0.8, 0.7, 0.9),
        keypoint_jitter=0.03,
    )
    net = dict(h=5, epochs=6, batch_size=256, seed=seed,
               hidden_layers=1, hidden_width=16)
    return replace(
        desk,
        profile="mini", artifact_dir="runs/mini",
        n_trajectories=3, n_train=2, n_test=1,
        noise_ratio=(2, 1),
        cycle=cycle,
        model_train=TrainConfig(lr=3e-3, **net),
        policy_train=TrainConfig(lr=3e-3, **net),
    )


@pytest.fixture()
def mini_cfg():
    return mini_config()
