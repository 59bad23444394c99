"""Policy deployment, the tracking metric suite, and the experiment drivers
(PD-vs-policy comparison, continual-learning rounds, ablations).

Metrics are computed per test trajectory and averaged over the test set;
angles are converted to degrees and end-effector distances to centimeters
only here, at the reporting boundary.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .collect import (
    Dataset,
    PolicyAdjust,
    _NoAdjust,
    collect_dataset,
    collect_with_policy,
    run_closed_loop,
)
from .config import RunConfig, config_hash, plant_hash
from .netlib import NetworkParams
from .plant import PdGains, Plant, PlantConfig, forward_kinematics
from .refgen import generate, split
from .train import (
    TrainConfig,
    model_prediction_mae,
    policy_input_dim_to_h,
    policy_tracking_mae,
    train_model,
    train_policy,
)

RAD2DEG = 180.0 / math.pi
M2CM = 100.0

# one metric row; column order is the machine-readable record contract
METRIC_KEYS = ("smt1_deg", "smt2_deg", "mae_deg", "rmse_deg", "fmae_deg",
               "etd_mae_cm", "etd_fmae_cm")

RunRecord = Dataset  # per-step records of a deployment run share the dataset layout


@dataclass
class MetricsReport:
    label: str
    per_traj: dict
    means: dict
    interaction_steps: Optional[int] = None

    @property
    def interaction_hours(self) -> Optional[float]:
        if self.interaction_steps is None:
            return None
        return self.interaction_steps / 20.0 / 3600.0

    def mae_deg(self) -> float:
        return self.means["mae_deg"]


def implement_policy(trajs, policy: Optional[NetworkParams], plant_cfg: PlantConfig,
                     gains: PdGains, threads: int = 1) -> RunRecord:
    """Track every trajectory with the PD loop, the policy (if any) adjusting
    each reference position; records one transition per trajectory point."""
    for traj in trajs:
        if len(traj) < 2:
            raise ValueError(f"trajectory {traj.id} is too short to track")

    def one(traj):
        adj = _NoAdjust() if policy is None else PolicyAdjust(
            policy, policy_input_dim_to_h(policy.spec.input_dim))
        return run_closed_loop(Plant(plant_cfg), gains, traj, adj)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, trajs))
    else:
        runs = [one(t) for t in trajs]
    label = "pd" if policy is None else "pd+policy"
    return RunRecord(runs=runs, meta={"label": label})


def compute_metrics(record: RunRecord, fk: Callable, trajs, label: str = "") -> MetricsReport:
    """Tracking precision and smoothness of a deployment record.

    MAE/RMSE pool absolute joint errors over steps and joints; FMAE uses the
    last recorded step; ETD distances go through the forward kinematics;
    smoothness terms are root mean squares of first/second differences of the
    measured positions (denominators T and T-1 with T the record length).
    """
    if len(record.runs) != len(trajs):
        raise ValueError(f"record has {len(record.runs)} runs for {len(trajs)} trajectories")
    per = {}
    for run, traj in zip(record.runs, trajs):
        if len(run) != len(traj):
            raise ValueError(f"run for {traj.id} has {len(run)} steps, trajectory has {len(traj)}")
        if run.source_id and traj.id and run.source_id != traj.id:
            raise ValueError(f"record/trajectory mismatch: {run.source_id} vs {traj.id}")
        q = run.obs[:, :4]
        qstar = traj.points_array()
        err = q - qstar
        n_steps = len(q)
        ee = fk(q)
        ee_star = fk(qstar)
        dist = np.linalg.norm(ee - ee_star, axis=1)
        d1 = np.diff(q, axis=0)
        d2 = np.diff(q, n=2, axis=0)
        per[traj.id] = {
            "smt1_deg": math.sqrt((d1 ** 2).sum() / n_steps) * RAD2DEG,
            "smt2_deg": math.sqrt((d2 ** 2).sum() / (n_steps - 1)) * RAD2DEG,
            "mae_deg": float(np.abs(err).mean()) * RAD2DEG,
            "rmse_deg": math.sqrt(float((err ** 2).mean())) * RAD2DEG,
            "fmae_deg": float(np.abs(err[-1]).mean()) * RAD2DEG,
            "etd_mae_cm": float(dist.mean()) * M2CM,
            "etd_fmae_cm": float(dist[-1]) * M2CM,
        }
    means = {k: float(np.mean([row[k] for row in per.values()])) for k in METRIC_KEYS}
    return MetricsReport(label=label or record.meta.get("label", ""), per_traj=per, means=means)


# ---------------------------------------------------------------------------
# experiment drivers


@dataclass
class PipelineArtifacts:
    """Everything one full training pipeline produces, kept in memory."""

    config: RunConfig
    refs_train: list
    refs_test: list
    dataset: Dataset
    holdout: Dataset
    model: NetworkParams
    model_curve: list
    policy: NetworkParams
    policy_curve: list


def make_references(cfg: RunConfig):
    trajs = generate(cfg.cycle, cfg.n_trajectories, [cfg.seed, 0x3EF])
    return split(trajs, cfg.n_train, cfg.n_test, [cfg.seed, 0x511])


def collect_holdout(cfg: RunConfig, refs_test, threads: int = 1) -> Dataset:
    """Clean PD passes over the test trajectories (model-evaluation data)."""
    return collect_dataset(refs_test, cfg.plant, cfg.gains, sigma_max=0.0,
                           noise_ratio=(0, 1), seed=[cfg.seed, 0x807], threads=threads)


def run_pipeline(cfg: RunConfig, log=None, threads: int = None) -> PipelineArtifacts:
    """Collect the mixed-noise dataset, train the model, then train the policy."""
    threads = cfg.threads if threads is None else threads
    refs_train, refs_test = make_references(cfg)
    dataset = collect_dataset(refs_train, cfg.plant, cfg.gains, cfg.sigma_max,
                              cfg.noise_ratio, seed=cfg.seed, threads=threads,
                              meta={"config": config_hash(cfg),
                                    "plant": plant_hash(cfg.plant)})
    holdout = collect_holdout(cfg, refs_test, threads=threads)
    model, model_curve = train_model(dataset, cfg.model_train, holdout=holdout, log=log)
    policy, policy_curve = train_policy(dataset, model, cfg.policy_train,
                                        holdout=holdout, log=log)
    return PipelineArtifacts(cfg, refs_train, refs_test, dataset, holdout,
                             model, model_curve, policy, policy_curve)


@dataclass
class ComparisonResult:
    pd_report: MetricsReport
    policy_report: MetricsReport
    pd_record: RunRecord
    policy_record: RunRecord
    artifacts: PipelineArtifacts


def run_comparison(cfg: RunConfig, artifacts: PipelineArtifacts = None,
                   log=None, threads: int = None) -> ComparisonResult:
    """PD-only baseline vs the trained adjustment policy on the held-out set."""
    threads = cfg.threads if threads is None else threads
    if artifacts is None:
        artifacts = run_pipeline(cfg, log=log, threads=threads)
    fk = lambda q: forward_kinematics(q, cfg.plant)
    pd_record = implement_policy(artifacts.refs_test, None, cfg.plant, cfg.gains,
                                 threads=threads)
    pol_record = implement_policy(artifacts.refs_test, artifacts.policy, cfg.plant,
                                  cfg.gains, threads=threads)
    pd_report = compute_metrics(pd_record, fk, artifacts.refs_test, label="pd")
    pol_report = compute_metrics(pol_record, fk, artifacts.refs_test, label="pd+policy")
    pol_report.interaction_steps = artifacts.dataset.size()
    return ComparisonResult(pd_report, pol_report, pd_record, pol_record, artifacts)


@dataclass
class RoundResult:
    round: int
    steps_added: int
    steps_total: int
    report: MetricsReport
    model: NetworkParams
    policy: NetworkParams
    record: RunRecord


def run_rounds(cfg: RunConfig, n_rounds: int = 3, artifacts: PipelineArtifacts = None,
               log=None, threads: int = None) -> list:
    """Continual learning: round 1 trains from scratch on the mixed-noise
    dataset; each later round collects one clean policy-driven pass over the
    training set and fine-tunes model and policy on only that new data,
    warm-started from the previous round."""
    threads = cfg.threads if threads is None else threads
    if artifacts is None:
        artifacts = run_pipeline(cfg, log=log, threads=threads)
    fk = lambda q: forward_kinematics(q, cfg.plant)
    results = []
    model, policy = artifacts.model, artifacts.policy
    steps_total = artifacts.dataset.size()
    record = implement_policy(artifacts.refs_test, policy, cfg.plant, cfg.gains,
                              threads=threads)
    report = compute_metrics(record, fk, artifacts.refs_test, label="round 1")
    report.interaction_steps = steps_total
    results.append(RoundResult(1, artifacts.dataset.size(), steps_total, report,
                               model, policy, record))
    for k in range(2, n_rounds + 1):
        new_data = collect_with_policy(artifacts.refs_train, policy, cfg.policy_train.h,
                                       cfg.plant, cfg.gains, threads=threads,
                                       meta={"round": k})
        model, _c = train_model(new_data, cfg.model_train, holdout=artifacts.holdout,
                                init=model, log=log)
        policy, _c = train_policy(new_data, model, cfg.policy_train,
                                  holdout=artifacts.holdout, init=policy, log=log)
        steps_total += new_data.size()
        record = implement_policy(artifacts.refs_test, policy, cfg.plant, cfg.gains,
                                  threads=threads)
        report = compute_metrics(record, fk, artifacts.refs_test, label=f"round {k}")
        report.interaction_steps = steps_total
        results.append(RoundResult(k, new_data.size(), steps_total, report,
                                   model, policy, record))
    return results


@dataclass
class AblationArm:
    label: str
    dataset_steps: int
    tr_mpe_deg: float
    te_mpe_deg: float
    po_mae_deg: float
    report: MetricsReport


@dataclass
class AblationResult:
    noise_arms: list
    smooth_arms: list


def _evaluate_arm(cfg: RunConfig, label: str, dataset: Dataset, holdout: Dataset,
                  refs_test, model=None, policy=None, policy_cfg: TrainConfig = None,
                  log=None, threads: int = 1):
    fk = lambda q: forward_kinematics(q, cfg.plant)
    policy_cfg = policy_cfg or cfg.policy_train
    if model is None:
        model, _ = train_model(dataset, cfg.model_train, holdout=holdout, log=log)
    if policy is None:
        policy, curve = train_policy(dataset, model, policy_cfg, holdout=holdout, log=log)
        po_mae = curve[-1]["po_mae"]
    else:
        po_mae = policy_tracking_mae(policy, model, dataset, policy_cfg.h)
    record = implement_policy(refs_test, policy, cfg.plant, cfg.gains, threads=threads)
    report = compute_metrics(record, fk, refs_test, label=label)
    report.interaction_steps = dataset.size()
    tr_mpe = model_prediction_mae(model, dataset, cfg.model_train.h)
    te_mpe = model_prediction_mae(model, record, cfg.model_train.h)
    return AblationArm(label, dataset.size(), tr_mpe * RAD2DEG, te_mpe * RAD2DEG,
                       po_mae * RAD2DEG, report), model, policy


def run_ablations(cfg: RunConfig, artifacts: PipelineArtifacts = None, log=None,
                  threads: int = None, k_smooth_values=(0.0, 1.0, 2.0)) -> AblationResult:
    """Noise-mix arms at equal data volume, and smoothness-weight arms sharing
    the mixed dataset and model."""
    threads = cfg.threads if threads is None else threads
    if artifacts is None:
        artifacts = run_pipeline(cfg, log=log, threads=threads)
    noisy, clean = cfg.noise_ratio
    total = noisy + clean
    arm_ratios = [("no-noise", (0, total)), ("only-noise", (total, 0)),
                  (f"{noisy}:{clean}", (noisy, clean))]
    noise_arms = []
    mixed_model, mixed_policy = None, None
    for label, ratio in arm_ratios:
        if ratio == tuple(cfg.noise_ratio):
            dataset = artifacts.dataset
            arm, model, policy = _evaluate_arm(
                cfg, label, dataset, artifacts.holdout, artifacts.refs_test,
                model=artifacts.model, policy=artifacts.policy, log=log, threads=threads)
            mixed_model, mixed_policy = model, policy
        else:
            dataset = collect_dataset(artifacts.refs_train, cfg.plant, cfg.gains,
                                      cfg.sigma_max, ratio, seed=cfg.seed, threads=threads)
            arm, _m, _p = _evaluate_arm(cfg, label, dataset, artifacts.holdout,
                                        artifacts.refs_test, log=log, threads=threads)
        noise_arms.append(arm)
    sizes = {arm.dataset_steps for arm in noise_arms}
    if len(sizes) != 1:
        raise AssertionError(f"noise arms have unequal data volumes: {sizes}")
    smooth_arms = []
    for k in k_smooth_values:
        pcfg = replace(cfg.policy_train, k_smooth=float(k))
        if float(k) == cfg.policy_train.k_smooth and mixed_policy is not None:
            # the pipeline policy was trained with exactly this config
            policy, curve = mixed_policy, artifacts.policy_curve
            arm, _m, _p = _evaluate_arm(cfg, f"k_smooth={k:g}", artifacts.dataset,
                                        artifacts.holdout, artifacts.refs_test,
                                        model=artifacts.model, policy=policy,
                                        policy_cfg=pcfg, log=log, threads=threads)
            arm.po_mae_deg = curve[-1]["po_mae"] * RAD2DEG
        else:
            arm, _m, _p = _evaluate_arm(cfg, f"k_smooth={k:g}", artifacts.dataset,
                                        artifacts.holdout, artifacts.refs_test,
                                        model=artifacts.model, policy_cfg=pcfg,
                                        log=log, threads=threads)
        smooth_arms.append(arm)
    return AblationResult(noise_arms=noise_arms, smooth_arms=smooth_arms)
