import numpy as np
import pytest

from reftrack.collect import (
    Dataset,
    collect_dataset,
    collect_trajectory,
    collect_with_policy,
    replay_check,
)
from reftrack.config import desk_profile
from reftrack.core import policy_input_dim
from reftrack.netlib import MlpSpec, init_params, zeroed_params
from reftrack.refgen import generate

CFG = desk_profile(seed=0)
TRAJS = generate(CFG.cycle, 3, seed=99)


def zero_policy(h=10):
    return zeroed_params(MlpSpec(policy_input_dim(h), 4, 2, 8, output_scale=(0.1,) * 4))


class TestCollectTrajectory:
    def test_sigma_zero_references_equal_desired(self):
        run = collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=0.0, seed=1)
        assert np.array_equal(run.qr_next, run.qstar_next)
        assert run.clean

    def test_noise_clipped_to_sigma(self):
        sigma = 0.02
        run = collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=sigma, seed=2)
        # one ulp of slack: the clipped delta is exact, qstar + delta - qstar is not
        assert np.abs(run.qr_next - run.qstar_next).max() <= sigma + 1e-12
        assert np.abs(run.qr_next - run.qstar_next).max() > 0

    def test_one_transition_per_point_and_done_last(self):
        traj = TRAJS[1]
        run = collect_trajectory(CFG.plant, CFG.gains, traj, sigma=0.01, seed=3)
        assert len(run) == len(traj)
        trans = list(run.transitions(0))
        assert [t.done for t in trans] == [False] * (len(traj) - 1) + [True]
        assert trans[0].t == 0 and trans[-1].t == len(traj) - 1

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=-0.1, seed=1)

    def test_qr_time_starts_at_initial_desired(self):
        run = collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=0.03, seed=4)
        pts = TRAJS[0].points_array()
        assert np.array_equal(run.qr_time()[0], pts[0])
        assert np.array_equal(run.qr_time()[1:], run.qr_next[:-1])


class TestCollectDataset:
    def test_pass_structure_and_metadata(self):
        ds = collect_dataset(TRAJS, CFG.plant, CFG.gains, sigma_max=0.05,
                             noise_ratio=(2, 1), seed=5)
        assert len(ds.runs) == 3 * 3
        assert ds.size() == sum(len(t) for t in TRAJS) * 3
        sigmas = ds.sigmas()
        for t in range(3):
            noisy = sigmas[3 * t:3 * t + 2]
            clean = sigmas[3 * t + 2]
            assert all(0 < s <= 0.05 for s in noisy)
            assert clean == 0.0

    def test_all_clean_degenerate(self):
        ds = collect_dataset(TRAJS[:1], CFG.plant, CFG.gains, sigma_max=0.0,
                             noise_ratio=(1, 0), seed=6)
        assert len(ds.runs) == 1
        assert ds.runs[0].clean

    def test_same_seed_identical(self):
        a = collect_dataset(TRAJS, CFG.plant, CFG.gains, 0.05, (2, 1), seed=7)
        b = collect_dataset(TRAJS, CFG.plant, CFG.gains, 0.05, (2, 1), seed=7)
        for ra, rb in zip(a.runs, b.runs):
            assert ra.sigma == rb.sigma
            assert np.array_equal(ra.obs, rb.obs)
            assert np.array_equal(ra.u, rb.u)

    def test_threads_do_not_change_result(self):
        a = collect_dataset(TRAJS, CFG.plant, CFG.gains, 0.05, (2, 1), seed=8, threads=1)
        b = collect_dataset(TRAJS, CFG.plant, CFG.gains, 0.05, (2, 1), seed=8, threads=4)
        for ra, rb in zip(a.runs, b.runs):
            assert np.array_equal(ra.obs, rb.obs)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            collect_dataset([], CFG.plant, CFG.gains, 0.05, (9, 2), seed=9)

    def test_replay_reproduces_observations(self):
        ds = collect_dataset(TRAJS, CFG.plant, CFG.gains, 0.05, (1, 1), seed=10)
        replay_check(ds, CFG.plant)  # raises on any mismatch

    def test_replay_detects_tampering(self):
        ds = collect_dataset(TRAJS[:1], CFG.plant, CFG.gains, 0.05, (1, 0), seed=11)
        ds.runs[0].u[5, 2] += 0.01
        with pytest.raises(AssertionError, match="replay mismatch"):
            replay_check(ds, CFG.plant)


class TestCollectWithPolicy:
    def test_zero_policy_equals_clean_pd(self):
        clean = collect_trajectory(CFG.plant, CFG.gains, TRAJS[0], sigma=0.0, seed=12)
        pol = collect_with_policy(TRAJS[:1], zero_policy(), 10, CFG.plant, CFG.gains)
        assert np.array_equal(pol.runs[0].obs, clean.obs)
        assert np.array_equal(pol.runs[0].qr_next, clean.qr_next)
        assert np.array_equal(pol.runs[0].u, clean.u)

    def test_actions_bounded_by_output_scale(self):
        policy = init_params(
            MlpSpec(policy_input_dim(10), 4, 2, 8, output_scale=(0.1,) * 4), seed=13)
        for layer in policy.hidden:
            layer.w[:] = np.random.default_rng(14).normal(size=layer.w.shape)
        ds = collect_with_policy(TRAJS, policy, 10, CFG.plant, CFG.gains)
        for run in ds.runs:
            assert np.abs(run.qr_next - run.qstar_next).max() <= 0.1

    def test_one_pass_per_trajectory(self):
        ds = collect_with_policy(TRAJS, zero_policy(), 10, CFG.plant, CFG.gains)
        assert len(ds.runs) == len(TRAJS)
        assert ds.size() == sum(len(t) for t in TRAJS)
