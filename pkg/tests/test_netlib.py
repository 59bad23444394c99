import math

import numpy as np
import pytest

from reftrack.netlib import (
    MlpSpec,
    TracedNet,
    adam_init,
    adam_step,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zeroed_params,
)
from reftrack.netlib import tape as T
from reftrack.netlib.checkpoint import CheckpointError
from reftrack.selftest import fd_gradient, gradient_checks, rel_error

SPEC = MlpSpec(input_dim=6, output_dim=3, hidden_layers=2, hidden_width=8,
               output_scale=(0.5, 1.0, 2.0))


class TestForward:
    def test_zero_params_zero_output(self):
        p = zeroed_params(SPEC)
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert np.all(forward(p, rng.normal(size=6)) == 0.0)

    def test_output_strictly_bounded_by_scale(self):
        rng = np.random.default_rng(1)
        p = init_params(SPEC, 1)
        for _ in range(20):
            out = forward(p, rng.normal(size=6) * 3)
            assert np.all(np.abs(out) < np.asarray(SPEC.output_scale))

    def test_one_unit_hand_network(self):
        # LayerNorm maps the width-1 vector to 0, the offset 0.5 gives
        # ELU(0.5)=0.5, output weight 1 and scale 1 give tanh(0.5)
        spec = MlpSpec(input_dim=1, output_dim=1, hidden_layers=1, hidden_width=1,
                       output_scale=(1.0,))
        p = init_params(spec, 0)
        p.hidden[0].w[:] = 1.0
        p.hidden[0].ln_offset[:] = 0.5
        p.out_w[:] = 1.0
        got = forward(p, np.array([123.456]))[0]
        assert got == pytest.approx(math.tanh(0.5), abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        p = init_params(SPEC, 2)
        with pytest.raises(ValueError):
            forward(p, np.zeros(5))

    def test_nonfinite_input_rejected(self):
        p = init_params(SPEC, 2)
        x = np.zeros(6)
        x[3] = np.inf
        with pytest.raises(ValueError):
            forward(p, x)

    def test_deterministic(self):
        p = init_params(SPEC, 3)
        x = np.random.default_rng(4).normal(size=(7, 6))
        assert np.array_equal(forward(p, x), forward(p, x))

    def test_layernorm_constant_vector_gives_offset(self):
        tp = T.Tape()
        gain = T.constant(np.array([2.0, 3.0, 4.0]))
        offset = T.constant(np.array([0.1, 0.2, 0.3]))
        out = T.layer_norm(tp, T.constant(np.full((2, 3), 7.7)), gain, offset)
        assert np.allclose(out.value, [[0.1, 0.2, 0.3]] * 2, atol=1e-12)

    def test_traced_matches_plain(self):
        p = init_params(SPEC, 5, norm_mean=np.arange(6) * 0.3,
                        norm_std=np.arange(1, 7) * 0.5)
        x = np.random.default_rng(6).normal(size=(4, 6))
        tp = T.Tape()
        traced = TracedNet(tp, p, trainable=True).apply(T.constant(x)).value
        assert np.array_equal(traced, forward(p, x))


class TestBackward:
    def test_gradient_checks_pass(self):
        for name, err in gradient_checks(seed=11):
            assert err < 1e-4, f"{name}: {err}"

    def test_norm_squared_loss_fd(self):
        p = init_params(SPEC, 7)
        x = np.random.default_rng(8).normal(size=(3, 6))

        def run(want_grads):
            tp = T.Tape()
            net = TracedNet(tp, p, trainable=want_grads)
            loss = T.sumsq_rows_mean(tp, net.apply(T.constant(x)))
            if not want_grads:
                return float(loss.value)
            tp.backward(loss)
            return net.grads()

        grads = run(True)
        for name, arr in p.param_items():
            numeric = fd_gradient(lambda: run(False), arr)
            assert rel_error(grads[name], numeric) < 1e-4, name

    def test_frozen_params_accumulate_nothing(self):
        p = init_params(SPEC, 9)
        x = np.random.default_rng(10).normal(size=(2, 6))
        tp = T.Tape()
        frozen = TracedNet(tp, p, trainable=False)
        inp = T.parameter(x)
        loss = T.sumsq_rows_mean(tp, frozen.apply(inp))
        tp.backward(loss)
        assert frozen.max_abs_grad() == 0.0
        for _name, var in frozen.param_vars():
            assert var.grad is None
        assert inp.grad is not None and np.abs(inp.grad).max() > 0

    def test_nonfinite_reported_with_op_index(self):
        tp = T.Tape()
        x = T.parameter(np.array([[1.0, 2.0]]))
        y = T.add(tp, x, T.constant(np.array([[np.inf, 0.0]])))
        loss = T.sumsq_rows_mean(tp, y)
        with pytest.raises(T.NonFiniteLoss) as e:
            tp.backward(loss)
        assert e.value.op_index == 0


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = init_params(SPEC, 12)
        state = adam_init(p, lr=0.01)
        zero = {name: np.zeros_like(a) for name, a in p.param_items()}
        p2, state = adam_step(p, zero, state)
        for (_n, a), (_n2, b) in zip(p.param_items(), p2.param_items()):
            assert np.array_equal(a, b)
        assert all(np.all(m == 0) for m in state.m.values())

    def test_first_step_normalized_update(self):
        p = init_params(SPEC, 13)
        lr, eps = 0.01, 1e-8
        state = adam_init(p, lr=lr, eps=eps)
        rng = np.random.default_rng(14)
        grads = {name: rng.normal(size=a.shape) for name, a in p.param_items()}
        p2, _ = adam_step(p, grads, state)
        before = dict(p.param_items())
        for name, after in p2.param_items():
            g = grads[name]
            expected = before[name] - lr * g / (np.abs(g) + eps)
            assert np.allclose(after, expected, rtol=0, atol=1e-15), name

    def test_constant_gradient_moves_against_sign(self):
        p = zeroed_params(SPEC)
        state = adam_init(p, lr=0.01)
        g = {name: np.full_like(a, 0.5) for name, a in p.param_items()}
        p1, state = adam_step(p, g, state)
        p2, state = adam_step(p1, g, state)
        w0 = dict(p.param_items())["h0.w"]
        w1 = dict(p1.param_items())["h0.w"]
        w2 = dict(p2.param_items())["h0.w"]
        assert np.all(w1 < w0) and np.all(w2 < w1)

    def test_lr_zero_is_identity(self):
        p = init_params(SPEC, 15)
        state = adam_init(p, lr=0.0)
        rng = np.random.default_rng(16)
        g = {name: rng.normal(size=a.shape) for name, a in p.param_items()}
        p2, _ = adam_step(p, g, state)
        for (_n, a), (_n2, b) in zip(p.param_items(), p2.param_items()):
            assert np.array_equal(a, b)

    def test_nonfinite_gradient_aborts(self):
        p = init_params(SPEC, 17)
        state = adam_init(p)
        g = {name: np.zeros_like(a) for name, a in p.param_items()}
        g["out.w"][0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="out.w"):
            adam_step(p, g, state)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(SPEC, 18, norm_mean=np.random.default_rng(1).normal(size=6),
                        norm_std=np.random.default_rng(2).uniform(0.5, 2, size=6))
        path = tmp_path / "net.json"
        save_checkpoint(p, path, kind="model", meta={"h": 3})
        p2, kind, meta = load_checkpoint(path)
        assert kind == "model" and meta == {"h": 3}
        rng = np.random.default_rng(19)
        for _ in range(100):
            x = rng.normal(size=6)
            assert np.array_equal(forward(p, x), forward(p2, x))

    def test_wrong_input_dim_names_layer_zero(self, tmp_path):
        p = init_params(SPEC, 20)
        path = tmp_path / "net.json"
        save_checkpoint(p, path)
        wrong = MlpSpec(input_dim=9, output_dim=3, hidden_layers=2, hidden_width=8,
                        output_scale=(0.5, 1.0, 2.0))
        with pytest.raises(CheckpointError, match="layer 0"):
            load_checkpoint(path, expect_spec=wrong)

    def test_zero_net_round_trip(self, tmp_path):
        p = zeroed_params(SPEC)
        path = tmp_path / "zero.json"
        save_checkpoint(p, path)
        p2, _, _ = load_checkpoint(path)
        assert np.all(forward(p2, np.ones(6)) == 0.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.json")
