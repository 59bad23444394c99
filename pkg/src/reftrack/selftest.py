"""Built-in verification: finite-difference gradient checks for every layer
primitive and for the h=3 rollout losses, plus a naive single-loop metric
implementation cross-checked against the vectorized one.

The naive metric code below deliberately avoids numpy reductions so the two
implementations share no code path.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .collect import TrajectoryRun
from .core import Trajectory, model_input_dim, policy_input_dim
from .evaluate import METRIC_KEYS, RunRecord, compute_metrics
from .netlib import MlpSpec, TracedNet, forward, init_params
from .netlib import tape as T
from .train import WindowIndex, model_loss, policy_loss


def fd_gradient(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def _check_primitive(name: str, build, arrays) -> float:
    """Gradient-check `build(tape, vars) -> scalar loss` wrt every array."""
    worst = 0.0
    for pos, target in enumerate(arrays):
        tp = T.Tape()
        vars_ = [T.parameter(a) for a in arrays]
        loss = build(tp, vars_)
        tp.backward(loss)
        analytic = vars_[pos].grad_or_zeros()

        def value():
            tp2 = T.Tape()
            return float(build(tp2, [T.constant(a) for a in arrays]).value)

        numeric = fd_gradient(value, target)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def gradient_checks(seed: int = 7):
    """Returns [(check name, max relative error versus central differences)]."""
    rng = np.random.default_rng(seed)
    results = []

    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(6, 4)) * 0.5
    b = rng.normal(size=4) * 0.1
    results.append(("affine", _check_primitive(
        "affine",
        lambda tp, v: T.sumsq_rows_mean(tp, T.add_bias(tp, T.matmul(tp, v[0], v[1]), v[2])),
        [x, w, b])))

    g = rng.normal(size=6) * 0.5 + 1.0
    o = rng.normal(size=6) * 0.2
    results.append(("layer_norm", _check_primitive(
        "layer_norm",
        lambda tp, v: T.sumsq_rows_mean(tp, T.layer_norm(tp, v[0], v[1], v[2])),
        [rng.normal(size=(5, 6)), g, o])))

    results.append(("elu", _check_primitive(
        "elu",
        lambda tp, v: T.sumsq_rows_mean(tp, T.elu(tp, v[0])),
        [rng.normal(size=(5, 6)) + 0.3])))

    results.append(("tanh", _check_primitive(
        "tanh",
        lambda tp, v: T.sumsq_rows_mean(tp, T.tanh(tp, v[0])),
        [rng.normal(size=(5, 6))])))

    mean = rng.normal(size=6)
    std = rng.uniform(0.5, 2.0, size=6)
    results.append(("standardize", _check_primitive(
        "standardize",
        lambda tp, v: T.sumsq_rows_mean(tp, T.affine_const(tp, v[0], -mean, 1.0 / std)),
        [rng.normal(size=(5, 6))])))

    results.append(("mlp_forward", _mlp_loss_check(seed)))
    results.append(("model_rollout_h3", _model_rollout_check(seed)))
    results.append(("policy_rollout_h3", _policy_rollout_check(seed)))
    return results


def _tiny_dataset(rng, length: int = 24) -> TrajectoryRun:
    qr = np.cumsum(rng.normal(scale=0.02, size=(length, 4)), axis=0)
    obs = np.concatenate([qr + rng.normal(scale=0.01, size=(length, 4)),
                          rng.normal(scale=0.05, size=(length, 4))], axis=1)
    qstar = qr + rng.normal(scale=0.01, size=(length, 4))
    u = rng.uniform(-1, 1, size=(length, 4))
    return TrajectoryRun("tiny", 0.0, obs, qr, qstar, u)


def _grad_check_net(params, build_loss, others=(), eps: float = 1e-4):
    """FD-check the loss built by `build_loss(params, *others)` wrt params.

    The multi-step rollout losses can carry enough third derivative that
    central differences at step 1e-4 truncate around 4e-4 (the disagreement
    shrinks as eps^2 and converges onto the analytic value, so it is oracle
    error); those checks pass eps=1e-6, where truncation is ~1e-6 and float64
    roundoff is still orders of magnitude below the 1e-4 bound.
    """
    worst = 0.0
    arrays = dict(params.param_items())
    analytic = build_loss(params, *others, want_grads=True)
    for name, arr in arrays.items():
        def value():
            return build_loss(params, *others, want_grads=False)

        numeric = fd_gradient(value, arr, eps=eps)
        worst = max(worst, rel_error(analytic[name], numeric))
    return worst


def _mlp_loss_check(seed: int) -> float:
    spec = MlpSpec(input_dim=5, output_dim=3, hidden_layers=2, hidden_width=4,
                   output_scale=(1.0, 1.0, 1.0))
    params = init_params(spec, [seed, 1])
    rng = np.random.default_rng([seed, 2])
    x = rng.normal(size=(3, 5))

    def build(p, want_grads):
        tp = T.Tape()
        net = TracedNet(tp, p, trainable=want_grads)
        loss = T.sumsq_rows_mean(tp, net.apply(T.constant(x)))
        if not want_grads:
            return float(loss.value)
        tp.backward(loss)
        return net.grads()

    return _grad_check_net(params, lambda p, want_grads: build(p, want_grads))


def _model_rollout_check(seed: int, h: int = 3) -> float:
    from .collect import Dataset
    from .train import _traced_model_loss, _traced_model_rollout

    rng = np.random.default_rng([seed, 3])
    run = _tiny_dataset(rng)
    idx = WindowIndex(Dataset(runs=[run]), h)
    batch = idx.gather(np.arange(4))
    spec = MlpSpec(input_dim=model_input_dim(h), output_dim=8, hidden_layers=2,
                   hidden_width=4, output_scale=(0.1,) * 4 + (0.5,) * 4)
    params = init_params(spec, [seed, 4])

    def build(p, want_grads):
        tp = T.Tape()
        net = TracedNet(tp, p, trainable=want_grads)
        preds = _traced_model_rollout(tp, net, batch, h)
        loss = _traced_model_loss(tp, preds, batch, h)
        if not want_grads:
            # weight decay enters the scalar so finite differences see it too
            return float(loss.value) + 0.003 * p.weight_sumsq()
        tp.backward(loss)
        grads = net.grads()
        arrays = dict(p.param_items())
        for name in p.decayed_names():
            grads[name] = grads[name] + 2.0 * 0.003 * arrays[name]
        return grads

    return _grad_check_net(params, lambda p, want_grads: build(p, want_grads), eps=1e-6)


def _policy_rollout_check(seed: int, h: int = 3) -> float:
    from .collect import Dataset
    from .train import _traced_policy_loss, _traced_policy_rollout

    rng = np.random.default_rng([seed, 5])
    run = _tiny_dataset(rng)
    idx = WindowIndex(Dataset(runs=[run]), h)
    batch = idx.gather(np.arange(4), policy=True)
    mspec = MlpSpec(input_dim=model_input_dim(h), output_dim=8, hidden_layers=2,
                    hidden_width=4, output_scale=(0.1,) * 4 + (0.5,) * 4)
    model = init_params(mspec, [seed, 6])
    pspec = MlpSpec(input_dim=policy_input_dim(h), output_dim=4, hidden_layers=2,
                    hidden_width=4, output_scale=(0.1,) * 4)
    policy = init_params(pspec, [seed, 7])

    def build(p, want_grads):
        tp = T.Tape()
        pol_net = TracedNet(tp, p, trainable=want_grads)
        mod_net = TracedNet(tp, model, trainable=False)
        actions, preds = _traced_policy_rollout(tp, pol_net, mod_net, batch, h)
        loss, _track, _reg = _traced_policy_loss(tp, preds, actions, batch, h,
                                                 gamma=0.98, k_smooth=1.0)
        if not want_grads:
            return float(loss.value)
        tp.backward(loss)
        if mod_net.max_abs_grad() != 0.0:
            raise AssertionError("frozen model accumulated gradients")
        return pol_net.grads()

    return _grad_check_net(policy, lambda p, want_grads: build(p, want_grads), eps=1e-6)


# ---------------------------------------------------------------------------
# naive metric twin


def naive_metrics(record: RunRecord, fk, trajs) -> list:
    """Single-loop reimplementation of compute_metrics (scalar math only)."""
    out = []
    for run, traj in zip(record.runs, trajs):
        pts = traj.points_array()
        n = len(run)
        abs_sum = 0.0
        sq_sum = 0.0
        dist_sum = 0.0
        for t in range(n):
            for j in range(4):
                e = run.obs[t, j] - pts[t, j]
                abs_sum += abs(e)
                sq_sum += e * e
            a = fk(run.obs[t, :4])
            b = fk(pts[t])
            dist_sum += math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
                                  + (a[2] - b[2]) ** 2)
        fin_abs = 0.0
        for j in range(4):
            fin_abs += abs(run.obs[n - 1, j] - pts[n - 1, j])
        a = fk(run.obs[n - 1, :4])
        b = fk(pts[n - 1])
        fin_dist = math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)
        s1 = 0.0
        for t in range(1, n):
            for j in range(4):
                s1 += (run.obs[t, j] - run.obs[t - 1, j]) ** 2
        s2 = 0.0
        for t in range(2, n):
            for j in range(4):
                s2 += (run.obs[t, j] - 2 * run.obs[t - 1, j] + run.obs[t - 2, j]) ** 2
        rad2deg = 180.0 / math.pi
        out.append({
            "smt1_deg": math.sqrt(s1 / n) * rad2deg,
            "smt2_deg": math.sqrt(s2 / (n - 1)) * rad2deg,
            "mae_deg": abs_sum / (4 * n) * rad2deg,
            "rmse_deg": math.sqrt(sq_sum / (4 * n)) * rad2deg,
            "fmae_deg": fin_abs / 4 * rad2deg,
            "etd_mae_cm": dist_sum / n * 100.0,
            "etd_fmae_cm": fin_dist * 100.0,
        })
    return out


def _random_record(rng, n_traj: int = 2):
    trajs, runs = [], []
    for k in range(n_traj):
        n = int(rng.integers(12, 40))
        pts = np.cumsum(rng.normal(scale=0.01, size=(n, 4)), axis=0)
        traj = Trajectory.from_array(0.05, pts, id=f"rnd-{k}")
        obs = np.concatenate([pts + rng.normal(scale=0.03, size=(n, 4)),
                              rng.normal(scale=0.1, size=(n, 4))], axis=1)
        runs.append(TrajectoryRun(traj.id, 0.0, obs, pts, pts,
                                  rng.uniform(-1, 1, size=(n, 4))))
        trajs.append(traj)
    return RunRecord(runs=runs), trajs


def metric_oracle_check(n_records: int = 50, seed: int = 123) -> float:
    """Max absolute disagreement between compute_metrics and the naive twin."""
    from .plant import PlantConfig, forward_kinematics

    cfg = PlantConfig()
    fk_vec = lambda q: forward_kinematics(q, cfg)
    fk_one = lambda q: forward_kinematics(np.asarray(q), cfg)
    worst = 0.0
    rng = np.random.default_rng(seed)
    for _ in range(n_records):
        record, trajs = _random_record(rng)
        fast = compute_metrics(record, fk_vec, trajs)
        slow = naive_metrics(record, fk_one, trajs)
        for row_fast, row_slow in zip((fast.per_traj[t.id] for t in trajs), slow):
            for key in METRIC_KEYS:
                worst = max(worst, abs(row_fast[key] - row_slow[key]))
    return worst


def hand_value_checks() -> list:
    """Frozen worked examples; returns [(name, got, expected, tolerance)]."""
    checks = []

    # one-unit network: LayerNorm collapses a width-1 vector to its offset
    spec = MlpSpec(input_dim=1, output_dim=1, hidden_layers=1, hidden_width=1,
                   output_scale=(1.0,))
    params = init_params(spec, 0)
    params.hidden[0].w[:] = 1.0
    params.hidden[0].ln_offset[:] = 0.5
    params.out_w[:] = 1.0
    got = float(forward(params, np.array([0.7]))[0])
    checks.append(("tanh_half_net", got, math.tanh(0.5), 1e-12))

    preds = np.array([[0.2, 0, 0, 0, 0, 0, 0, 0], [0.4, 0, 0, 0, 0, 0, 0, 0]])
    tgts = np.array([[0.0] * 8, [0.0] * 8])
    checks.append(("model_loss_h2", model_loss(preds, tgts, None, 0.0), 0.10, 1e-12))

    preds = np.zeros((2, 8))
    preds[0, 0] = 0.1
    preds[1, 0] = 0.2
    qstar = np.zeros((2, 4))
    acts = np.zeros((2, 4))
    expected = (0.98 * 0.01 + 0.98 ** 2 * 0.04) / 2
    checks.append(("policy_loss_track_h2",
                   policy_loss(preds, qstar, acts, 0.98, 1.0), expected, 1e-12))

    acts = np.array([[0.0, 0, 0, 0], [0.1, 0, 0, 0]])
    checks.append(("policy_loss_reg_h2",
                   policy_loss(np.zeros((2, 8)), np.zeros((2, 4)), acts, 0.98, 1.0),
                   0.01, 1e-12))
    return checks


def run_selftest(print_fn=print) -> int:
    """Full selftest; returns a process exit code (0 = everything passed)."""
    t0 = time.time()
    ok = True
    print_fn("gradient checks (max relative error vs central differences, bound 1e-4):")
    for name, err in gradient_checks():
        good = err < 1e-4
        ok = ok and good
        print_fn(f"  {'PASS' if good else 'FAIL'}  {name:20s} {err:.3e}")
    worst = metric_oracle_check()
    good = worst < 1e-12
    ok = ok and good
    print_fn(f"metric oracle (50 random records, bound 1e-12):")
    print_fn(f"  {'PASS' if good else 'FAIL'}  max disagreement {worst:.3e}")
    print_fn("hand-computed values:")
    for name, got, expected, tol in hand_value_checks():
        good = abs(got - expected) <= tol
        ok = ok and good
        print_fn(f"  {'PASS' if good else 'FAIL'}  {name:20s} got {got!r} expected {expected!r}")
    print_fn(f"selftest {'passed' if ok else 'FAILED'} in {time.time() - t0:.1f}s")
    return 0 if ok else 1
