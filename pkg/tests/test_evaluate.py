import math

import numpy as np
import pytest

from reftrack.collect import TrajectoryRun, collect_trajectory
from reftrack.config import desk_profile
from reftrack.core import Trajectory, policy_input_dim
from reftrack.evaluate import (
    METRIC_KEYS,
    RunRecord,
    compute_metrics,
    implement_policy,
)
from reftrack.netlib import MlpSpec, init_params, zeroed_params
from reftrack.plant import forward_kinematics
from reftrack.refgen import generate
from reftrack.selftest import metric_oracle_check, naive_metrics

CFG = desk_profile(seed=0)
FK = lambda q: forward_kinematics(q, CFG.plant)
TRAJS = generate(CFG.cycle, 2, seed=42)


def record_from(q_rows, traj):
    n = len(q_rows)
    obs = np.concatenate([np.asarray(q_rows, dtype=float),
                          np.zeros((n, 4))], axis=1)
    pts = traj.points_array()
    return RunRecord(runs=[TrajectoryRun(traj.id, 0.0, obs, pts, pts, np.zeros((n, 4)))])


class TestComputeMetrics:
    def test_exact_tracking_gives_zero_errors(self):
        traj = TRAJS[0]
        rec = record_from(traj.points_array(), traj)
        rep = compute_metrics(rec, FK, [traj])
        row = rep.per_traj[traj.id]
        for key in ("mae_deg", "rmse_deg", "fmae_deg", "etd_mae_cm", "etd_fmae_cm"):
            assert row[key] == 0.0

    def test_constant_trajectory_zero_smoothness(self):
        pts = np.tile([0.1, -0.2, 0.5, 0.3], (20, 1))
        traj = Trajectory.from_array(0.05, pts, id="hold")
        rep = compute_metrics(record_from(pts, traj), FK, [traj])
        assert rep.per_traj["hold"]["smt1_deg"] == 0.0
        assert rep.per_traj["hold"]["smt2_deg"] == 0.0

    def test_two_step_hand_case(self):
        pts = np.zeros((2, 4))
        traj = Trajectory.from_array(0.05, pts, id="hand", max_step=0.2)
        q = np.array([[0.0, 0, 0, 0], [0.1, 0, 0, 0]])
        rep = compute_metrics(record_from(q, traj), FK, [traj])
        row = rep.per_traj["hand"]
        assert row["mae_deg"] == pytest.approx(0.0125 * 180 / math.pi, abs=1e-12)
        assert row["smt1_deg"] == pytest.approx(math.sqrt(0.01 / 2) * 180 / math.pi,
                                                abs=1e-12)

    def test_interaction_time_mapping(self):
        rep = compute_metrics(record_from(TRAJS[0].points_array(), TRAJS[0]),
                              FK, [TRAJS[0]])
        rep.interaction_steps = 176720
        assert rep.interaction_hours == pytest.approx(2.4544, abs=1e-3)
        assert f"{rep.interaction_hours:.2f}" == "2.45"

    def test_misalignment_rejected(self):
        traj = TRAJS[0]
        pts = traj.points_array()[:-3]
        short = Trajectory.from_array(traj.dt, pts, id=traj.id)
        rec = record_from(pts, short)  # internally consistent, 3 steps short
        with pytest.raises(ValueError):
            compute_metrics(rec, FK, [traj])

    def test_joint_pooling_weight_is_quarter(self):
        # an error on a single joint enters MAE with weight exactly 1/(4 steps)
        pts = np.zeros((10, 4))
        traj = Trajectory.from_array(0.05, pts, id="pool", max_step=0.2)
        q = pts.copy()
        q[:, 2] = 0.04
        rep = compute_metrics(record_from(q, traj), FK, [traj])
        assert rep.per_traj["pool"]["mae_deg"] == pytest.approx(
            0.04 / 4 * 180 / math.pi, abs=1e-12)

    def test_matches_naive_oracle(self):
        assert metric_oracle_check(n_records=50, seed=7) < 1e-12

    def test_naive_oracle_on_real_runs(self):
        run = collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=0.0, seed=1)
        rec = RunRecord(runs=[run])
        fast = compute_metrics(rec, FK, [TRAJS[0]])
        slow = naive_metrics(rec, lambda q: forward_kinematics(np.asarray(q), CFG.plant),
                             [TRAJS[0]])
        for key in METRIC_KEYS:
            assert fast.per_traj[TRAJS[0].id][key] == pytest.approx(slow[0][key],
                                                                    abs=1e-12)


class TestImplementPolicy:
    def test_zero_policy_bit_equals_pd_run(self):
        zero = zeroed_params(MlpSpec(policy_input_dim(10), 4, 1, 8,
                                     output_scale=(0.1,) * 4))
        pd = implement_policy(TRAJS, None, CFG.plant, CFG.gains)
        pol = implement_policy(TRAJS, zero, CFG.plant, CFG.gains)
        for a, b in zip(pd.runs, pol.runs):
            assert np.array_equal(a.obs, b.obs)
            assert np.array_equal(a.u, b.u)
        # and the metric reports agree exactly
        ra = compute_metrics(pd, FK, TRAJS)
        rb = compute_metrics(pol, FK, TRAJS)
        for t in ra.per_traj:
            for key in METRIC_KEYS:
                assert ra.per_traj[t][key] == rb.per_traj[t][key]

    def test_record_length_matches_trajectories(self):
        rec = implement_policy(TRAJS, None, CFG.plant, CFG.gains)
        assert rec.size() == sum(len(t) for t in TRAJS)

    def test_deterministic_across_threads(self):
        policy = init_params(MlpSpec(policy_input_dim(10), 4, 1, 8,
                                     output_scale=(0.1,) * 4), seed=3)
        a = implement_policy(TRAJS, policy, CFG.plant, CFG.gains, threads=1)
        b = implement_policy(TRAJS, policy, CFG.plant, CFG.gains, threads=4)
        for ra, rb in zip(a.runs, b.runs):
            assert np.array_equal(ra.obs, rb.obs)
            assert np.array_equal(ra.qr_next, rb.qr_next)


class TestDrivers:
    """Driver smoke tests on a seconds-scale config."""

    def test_comparison_and_rounds_and_ablations(self, mini_cfg):
        from reftrack.evaluate import run_ablations, run_comparison, run_rounds

        res = run_comparison(mini_cfg)
        assert res.pd_report.interaction_steps is None
        assert res.policy_report.interaction_steps == res.artifacts.dataset.size()
        assert set(res.policy_report.per_traj) == {t.id for t in res.artifacts.refs_test}

        rounds = run_rounds(mini_cfg, n_rounds=3, artifacts=res.artifacts)
        assert [r.round for r in rounds] == [1, 2, 3]
        one_pass = sum(len(t) for t in res.artifacts.refs_train)
        assert rounds[1].steps_added == one_pass
        assert rounds[2].steps_added == one_pass
        assert rounds[2].steps_total == res.artifacts.dataset.size() + 2 * one_pass

        abl = run_ablations(mini_cfg, artifacts=res.artifacts)
        assert [a.label for a in abl.noise_arms] == ["no-noise", "only-noise", "2:1"]
        assert len({a.dataset_steps for a in abl.noise_arms}) == 1
        assert [a.label for a in abl.smooth_arms] == ["k_smooth=0", "k_smooth=1", "k_smooth=2"]
        for arm in abl.noise_arms + abl.smooth_arms:
            assert arm.tr_mpe_deg >= 0 and arm.te_mpe_deg >= 0 and arm.po_mae_deg >= 0

    def test_cli_rounds_and_ablate_write_reports(self, mini_cfg, tmp_path):
        import os
        from dataclasses import replace

        from reftrack.cli import main
        from reftrack.config import save_config

        cfg = replace(mini_cfg, artifact_dir=str(tmp_path / "run"))
        path = tmp_path / "mini.json"
        save_config(cfg, path)
        assert main(["rounds", "--config", str(path), "--rounds", "2"]) == 0
        assert main(["ablate", "--config", str(path)]) == 0
        reports = os.path.join(cfg.artifact_dir, "reports")
        assert os.path.exists(os.path.join(reports, "rounds.txt"))
        text = open(os.path.join(reports, "ablation.txt")).read()
        assert "Tr.MPE" in text and "Po.MAE" in text
