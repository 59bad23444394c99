import numpy as np
import pytest

from reftrack.core import (
    HistoryWindow,
    JointVector,
    Observation,
    Trajectory,
    flatten_inputs,
    model_input_dim,
    pad_history,
    pad_prefix,
    policy_input_dim,
    shift_window,
)


def jv(*vals):
    return JointVector(*vals)


def obs(k):
    return Observation(jv(k, k + 1, k + 2, k + 3), jv(0.1 * k, 0, 0, 0))


class TestTypes:
    def test_joint_vector_rejects_nan(self):
        with pytest.raises(ValueError):
            JointVector(0.0, float("nan"), 0.0, 0.0)

    def test_observation_flat_order(self):
        o = Observation(jv(1, 2, 3, 4), jv(5, 6, 7, 8))
        assert o.flat().tolist() == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_trajectory_step_bound(self):
        pts = np.zeros((5, 4))
        pts[3, 0] = 0.2  # 0.2 rad jump
        with pytest.raises(ValueError):
            Trajectory.from_array(0.05, pts)

    def test_trajectory_min_length(self):
        with pytest.raises(ValueError):
            Trajectory.from_array(0.05, np.zeros((1, 4)))

    def test_history_window_length_match(self):
        with pytest.raises(ValueError):
            HistoryWindow(obs=(obs(0), obs(1)), refs=(jv(0, 0, 0, 0),))


class TestPadHistory:
    def test_single_element_padded_to_h_plus_one(self):
        padded = pad_prefix([obs(0)], h=20)
        assert len(padded) == 21
        assert all(p is padded[0] for p in padded)

    def test_full_prefix_unchanged(self):
        seq = [obs(i) for i in range(21)]
        assert pad_prefix(seq, h=20) == tuple(seq)

    def test_two_element_prefix(self):
        a, b = obs(0), obs(1)
        assert pad_prefix([a, b], h=3) == (a, a, a, b)

    def test_empty_prefix_rejected(self):
        with pytest.raises(ValueError):
            pad_prefix([], h=4)

    def test_window_builder(self):
        w = pad_history([obs(0)], [jv(1, 1, 1, 1)], h=4)
        assert len(w.obs) == 5 and len(w.refs) == 5
        assert w.h == 4


class TestShiftWindow:
    def test_queue_semantics(self):
        w = HistoryWindow(obs=(obs(0), obs(1), obs(2)),
                          refs=(jv(0, 0, 0, 0), jv(1, 0, 0, 0), jv(2, 0, 0, 0)))
        w2 = shift_window(w, obs(3), jv(3, 0, 0, 0))
        assert w2.obs == (obs(1), obs(2), obs(3))
        assert w2.refs[-1] == jv(3, 0, 0, 0)

    def test_constant_shift_fixed_point(self):
        w = pad_history([obs(5)], [jv(1, 2, 3, 4)], h=3)
        for _ in range(4):
            w = shift_window(w, obs(5), jv(1, 2, 3, 4))
        assert all(o == obs(5) for o in w.obs)

    def test_oldest_after_shift(self):
        w = HistoryWindow(obs=(obs(0), obs(1), obs(2)),
                          refs=(jv(0, 0, 0, 0),) * 3)
        assert shift_window(w, obs(9), jv(0, 0, 0, 0)).obs[0] == obs(1)

    def test_no_drift_against_raw_history(self):
        # repeated shifting reproduces the last h+1 raw entries exactly
        h = 6
        raw_obs = [obs(i) for i in range(30)]
        raw_refs = [jv(i, 0, 0, 0) for i in range(30)]
        w = pad_history(raw_obs[:1], raw_refs[:1], h)
        for o, r in zip(raw_obs[1:], raw_refs[1:]):
            w = shift_window(w, o, r)
        assert w.obs == tuple(raw_obs[-(h + 1):])
        assert w.refs == tuple(raw_refs[-(h + 1):])


class TestFlattenInputs:
    def test_model_input_dims(self):
        assert model_input_dim(20) == 256
        assert policy_input_dim(20) == 332
        assert model_input_dim(1) == 28

    def test_layout(self):
        h = 2
        w = HistoryWindow(obs=tuple(obs(i) for i in range(h + 1)),
                          refs=tuple(jv(10 + i, 0, 0, 0) for i in range(h + 1)))
        flat = flatten_inputs(w, [jv(99, 98, 97, 96)])
        assert len(flat) == model_input_dim(h)
        assert flat[0] == 0  # first obs, first component
        assert flat[8 * (h + 1)] == 10  # first ref after all obs
        assert flat[-4:].tolist() == [99, 98, 97, 96]

    def test_injective_on_random_pairs(self):
        rng = np.random.default_rng(0)
        h = 3
        seen = set()
        for _ in range(50):
            o_seq = tuple(Observation.from_array(rng.normal(size=8)) for _ in range(h + 1))
            r_seq = tuple(JointVector.from_array(rng.normal(size=4)) for _ in range(h + 1))
            extra = [JointVector.from_array(rng.normal(size=4))]
            flat = flatten_inputs(HistoryWindow(o_seq, r_seq), extra)
            key = flat.tobytes()
            assert key not in seen
            seen.add(key)
