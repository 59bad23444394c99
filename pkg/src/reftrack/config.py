"""Run configuration: one document wiring plant, controller, cycles, collection
and both training phases together.

Two built-in profiles: "paper" uses the full-scale hyperparameters (20 s
cycles, 48 trajectories, h=20, 2000 epochs, 6x512 networks) and takes hours;
"desk" is a scaled-down twin (6 s cycles, 10 trajectories, h=10, 200 epochs,
small networks) sized so the full pipeline and the acceptance suite run in
minutes on a laptop CPU.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, replace

from .plant import PdGains, PlantConfig
from .refgen import CycleSpec
from .train import TrainConfig


class ConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    seed: int = 1
    threads: int = 1
    artifact_dir: str = "runs/desk"
    n_trajectories: int = 10
    n_train: int = 8
    n_test: int = 2
    sigma_max: float = 0.05
    noise_ratio: tuple = (9, 2)
    plant: PlantConfig = PlantConfig()
    gains: PdGains = PdGains()
    cycle: CycleSpec = CycleSpec()
    model_train: TrainConfig = TrainConfig()
    policy_train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.n_train + self.n_test != self.n_trajectories:
            raise ConfigError("n_train + n_test must equal n_trajectories")
        if self.model_train.h != self.policy_train.h:
            raise ConfigError("model and policy must share the same horizon h")
        if self.sigma_max < 0:
            raise ConfigError("sigma_max must be >= 0")
        if len(self.noise_ratio) != 2 or min(self.noise_ratio) < 0 or sum(self.noise_ratio) < 1:
            raise ConfigError(f"bad noise_ratio {self.noise_ratio}")


def paper_profile(seed: int = 1) -> RunConfig:
    train = TrainConfig(h=20, epochs=2000, batch_size=2048, lr=1e-5, seed=seed,
                        hidden_layers=6, hidden_width=512)
    return RunConfig(
        profile="paper", seed=seed, artifact_dir="runs/paper",
        n_trajectories=48, n_train=40, n_test=8,
        model_train=train, policy_train=train,
    )


def desk_profile(seed: int = 1) -> RunConfig:
    cycle = CycleSpec(
        waypoints=(
            (0.0, -0.35, 0.60, 0.30),
            (0.0, -0.50, 0.85, 0.65),
            (0.35, -0.20, 0.65, 0.50),
            (0.50, -0.10, 0.45, -0.10),
        ),
        phase_durations=(0.9, 1.2, 1.0, 1.3),
        keypoint_jitter=0.05,
    )
    net = dict(h=10, epochs=200, batch_size=256, seed=seed,
               hidden_layers=2, hidden_width=32)
    return RunConfig(
        profile="desk", seed=seed, artifact_dir="runs/desk",
        n_trajectories=10, n_train=8, n_test=2,
        cycle=cycle,
        model_train=TrainConfig(lr=1e-3, **net),
        policy_train=TrainConfig(lr=3e-3, **net),
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}


def profile_config(name: str, seed: int = None) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[name]()
    if seed is not None:
        cfg = with_seed(cfg, seed)
    return cfg


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Thread one master seed through the config and both training phases."""
    return replace(
        cfg, seed=seed,
        model_train=replace(cfg.model_train, seed=seed),
        policy_train=replace(cfg.policy_train, seed=seed),
    )


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def _build(dc_type, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if dataclasses.is_dataclass(_RESOLVED.get(ftype, None)):
            kwargs[name] = _build(_RESOLVED[ftype], value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}")


_RESOLVED = {
    "PlantConfig": PlantConfig,
    "PdGains": PdGains,
    "CycleSpec": CycleSpec,
    "TrainConfig": TrainConfig,
}


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    return from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(to_dict(cfg), f, indent=2)
        f.write("\n")


def plant_hash(plant) -> str:
    """Digest of the plant parameters alone (embedded in dataset headers so a
    replay check can refuse data from a different plant)."""
    blob = json.dumps(dataclasses.asdict(plant), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def config_hash(cfg: RunConfig) -> str:
    """Short digest over everything that shapes the artifacts.

    Execution details (thread cap, artifact directory) are excluded so the
    same experiment hashes identically wherever and however it runs.
    """
    doc = to_dict(cfg)
    doc.pop("threads", None)
    doc.pop("artifact_dir", None)
    blob = json.dumps(doc, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
