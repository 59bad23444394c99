"""Model and policy training: multi-step rollouts through the closed-loop
dynamics model with backpropagation through all h steps.

The model is trained to predict observation changes along recorded reference
sequences (mean squared h-step error plus weight decay); the policy is trained
through the frozen model to pull predicted positions onto the desired
trajectory (discounted squared errors plus an action-smoothness penalty).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .collect import Dataset
from .core import model_input_dim, policy_input_dim
from .netlib import tape as T
from .netlib import (
    MlpSpec,
    NetworkParams,
    TracedNet,
    adam_init,
    adam_step,
    forward,
    init_params,
)


@dataclass(frozen=True)
class TrainConfig:
    h: int = 20
    epochs: int = 2000
    batch_size: int = 2048
    lr: float = 1e-5
    weight_decay: float = 0.003
    gamma: float = 0.98
    k_smooth: float = 1.0
    seed: int = 0
    hidden_layers: int = 6
    hidden_width: int = 512
    out_scale_pos: float = 0.1      # model: max predicted position change per tick
    out_scale_vel: float = 0.5      # model: max predicted velocity change per tick
    out_scale_action: float = 0.1   # policy: max reference adjustment

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.weight_decay < 0 or self.k_smooth < 0:
            raise ValueError("weight_decay and k_smooth must be >= 0")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: Optional[NetworkParams]):
        super().__init__(message)
        self.last_good = last_good


class WindowIndex:
    """Vectorized window sampling over a dataset.

    A window starting at step t inside one run provides histories
    (o, qr)_{t-h..t} (clamped at the run start, which realizes the o_0
    padding), targets o_{t+1..t+h}, driving references qr_{t+1..t+h} and
    desired positions out to q*_{t+2h} (clamped at the run end).  Windows
    never cross run boundaries.
    """

    def __init__(self, dataset: Dataset, h: int):
        self.h = h
        obs, qr, qstar = [], [], []
        starts, lens = [], []
        off = 0
        for run in dataset.runs:
            obs.append(run.obs)
            qr.append(run.qr_time())
            qstar.append(run.qstar_time())
            starts.append(off)
            lens.append(len(run))
            off += len(run)
        self.obs = np.concatenate(obs)
        self.qr = np.concatenate(qr)
        self.qstar = np.concatenate(qstar)
        base, lo, hi, group = [], [], [], []
        for g, (s, L) in enumerate(zip(starts, lens)):
            n_valid = L - h
            for t in range(max(n_valid, 0)):
                base.append(s + t)
                lo.append(s)
                hi.append(s + L - 1)
                group.append(g)
        self.base = np.asarray(base, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.group = np.asarray(group, dtype=np.int64)
        self.sources = [run.source_id for run in dataset.runs]

    def __len__(self) -> int:
        return len(self.base)

    def gather(self, sel, policy: bool = False) -> dict:
        h = self.h
        t0 = self.base[sel]
        lo = self.lo[sel][:, None]
        hi = self.hi[sel][:, None]
        hist = np.clip(t0[:, None] + np.arange(-h, 1), lo, hi)
        fut = t0[:, None] + np.arange(1, h + 1)  # within bounds by construction
        out = {
            "o_hist": self.obs[hist],
            "qr_hist": self.qr[hist],
            "o_tgt": self.obs[fut],
            "qr_next": self.qr[fut],
            "group": self.group[sel],
        }
        if policy:
            out["qstar_tgt"] = self.qstar[fut]
            ext = np.clip(t0[:, None] + np.arange(h + 1, 2 * h), lo, hi)
            out["qstar_ext"] = self.qstar[ext]
        return out


def _model_spec(cfg: TrainConfig) -> MlpSpec:
    return MlpSpec(
        input_dim=model_input_dim(cfg.h), output_dim=8,
        hidden_layers=cfg.hidden_layers, hidden_width=cfg.hidden_width,
        output_scale=(cfg.out_scale_pos,) * 4 + (cfg.out_scale_vel,) * 4,
    )


def _policy_spec(cfg: TrainConfig) -> MlpSpec:
    return MlpSpec(
        input_dim=policy_input_dim(cfg.h), output_dim=4,
        hidden_layers=cfg.hidden_layers, hidden_width=cfg.hidden_width,
        output_scale=(cfg.out_scale_action,) * 4,
    )


def _component_stats(idx: WindowIndex):
    from .netlib import standardize_stats

    return (standardize_stats(idx.obs), standardize_stats(idx.qr),
            standardize_stats(idx.qstar))


def model_norm_stats(idx: WindowIndex, h: int):
    """Per-input-slot statistics tiled from component statistics."""
    (om, os_), (rm, rs), _ = _component_stats(idx)
    mean = np.concatenate([np.tile(om, h + 1), np.tile(rm, h + 1), rm])
    std = np.concatenate([np.tile(os_, h + 1), np.tile(rs, h + 1), rs])
    return mean, std


def policy_norm_stats(idx: WindowIndex, h: int):
    (om, os_), (rm, rs), (sm, ss) = _component_stats(idx)
    mean = np.concatenate([np.tile(om, h + 1), np.tile(rm, h + 1), np.tile(sm, h)])
    std = np.concatenate([np.tile(os_, h + 1), np.tile(rs, h + 1), np.tile(ss, h)])
    return mean, std


# ---------------------------------------------------------------------------
# rollouts


def _traced_model_rollout(tp: T.Tape, net: TracedNet, batch: dict, h: int):
    """Unrolled prediction; recorded history enters as pre-flattened constant
    blocks, the model's own predictions as tape vars (gradient flows through
    them into every earlier step)."""
    n = batch["o_hist"].shape[0]
    o_flat = np.ascontiguousarray(batch["o_hist"]).reshape(n, -1)
    # recorded references for the whole window plus the h driving references
    qr_full = np.concatenate([batch["qr_hist"], batch["qr_next"]], axis=1).reshape(n, -1)
    o_cur = T.constant(batch["o_hist"][:, -1])
    preds = []
    for i in range(h):
        parts = [T.constant(o_flat[:, 8 * i:])] + preds[:i]
        parts.append(T.constant(qr_full[:, 4 * i:4 * (i + h + 2)]))
        o_cur = T.add(tp, o_cur, net.apply(T.concat_cols(tp, parts)))
        preds.append(o_cur)
    return preds


def _traced_policy_rollout(tp: T.Tape, policy_net: TracedNet, model_net: TracedNet,
                           batch: dict, h: int):
    """Unrolled adjustment + prediction; the policy's references re-enter both
    networks' history windows, so gradients also flow along the reference
    channel."""
    n = batch["o_hist"].shape[0]
    o_flat = np.ascontiguousarray(batch["o_hist"]).reshape(n, -1)
    qr_flat = np.ascontiguousarray(batch["qr_hist"]).reshape(n, -1)
    qstar_flat = np.concatenate([batch["qstar_tgt"], batch["qstar_ext"]], axis=1).reshape(n, -1)
    o_cur = T.constant(batch["o_hist"][:, -1])
    actions, preds, qr_made = [], [], []
    for i in range(h):
        obs_parts = [T.constant(o_flat[:, 8 * i:])] + preds[:i]
        qr_parts = [T.constant(qr_flat[:, 4 * i:])] + qr_made[:i]
        fut = T.constant(qstar_flat[:, 4 * i:4 * (i + h)])
        a = policy_net.apply(T.concat_cols(tp, obs_parts + qr_parts + [fut]))
        qr_next = T.add(tp, T.constant(batch["qstar_tgt"][:, i]), a)
        x = T.concat_cols(tp, obs_parts + qr_parts + [qr_next])
        o_cur = T.add(tp, o_cur, model_net.apply(x))
        actions.append(a)
        preds.append(o_cur)
        qr_made.append(qr_next)
    return actions, preds


def _traced_model_loss(tp: T.Tape, preds, batch: dict, h: int):
    """Eq.-style mean squared h-step error (weight decay added analytically)."""
    terms = [T.weighted_sq_err(tp, p, batch["o_tgt"][:, i], 1.0 / h)
             for i, p in enumerate(preds)]
    return T.weighted_sum(tp, terms, [1.0] * len(terms))


def _traced_policy_loss(tp: T.Tape, preds, actions, batch: dict, h: int,
                        gamma: float, k_smooth: float):
    """Discounted position tracking plus action-differential smoothing.

    Returns (loss, track_terms, reg_terms); the term values are already
    weighted, so the loss is their plain sum.
    """
    track = [T.weighted_sq_err(tp, p, batch["qstar_tgt"][:, i],
                               gamma ** (i + 1) / h, cols=4)
             for i, p in enumerate(preds)]
    reg = [T.weighted_sq_diff(tp, actions[i], actions[i - 1], k_smooth / (h - 1))
           for i in range(1, h)]
    return T.weighted_sum(tp, track + reg, [1.0] * (len(track) + len(reg))), track, reg


def model_rollout_batch(params: NetworkParams, o_hist, qr_hist, qr_next) -> np.ndarray:
    """Forward-only batched h-step rollout; returns predictions (B, h, 8)."""
    o_hist = [o_hist[:, j] for j in range(o_hist.shape[1])]
    qr_hist = [qr_hist[:, j] for j in range(qr_hist.shape[1])]
    h = qr_next.shape[1]
    o_cur = o_hist[-1]
    preds = np.empty((o_cur.shape[0], h, 8))
    for i in range(h):
        ref = qr_next[:, i]
        x = np.concatenate(o_hist + qr_hist + [ref], axis=1)
        o_cur = o_cur + forward(params, x)
        preds[:, i] = o_cur
        o_hist = o_hist[1:] + [o_cur]
        qr_hist = qr_hist[1:] + [ref]
    return preds


def policy_rollout_batch(policy: NetworkParams, model: NetworkParams,
                         o_hist, qr_hist, qstar_tgt, qstar_ext):
    """Forward-only batched policy rollout; returns (actions (B,h,4), preds (B,h,8))."""
    o_hist = [o_hist[:, j] for j in range(o_hist.shape[1])]
    qr_hist = [qr_hist[:, j] for j in range(qr_hist.shape[1])]
    h = qstar_tgt.shape[1]
    fut = [qstar_tgt[:, j] for j in range(h)]
    o_cur = o_hist[-1]
    batch = o_cur.shape[0]
    actions = np.empty((batch, h, 4))
    preds = np.empty((batch, h, 8))
    for i in range(h):
        a = forward(policy, np.concatenate(o_hist + qr_hist + fut, axis=1))
        qr_next = qstar_tgt[:, i] + a
        x = np.concatenate(o_hist + qr_hist + [qr_next], axis=1)
        o_cur = o_cur + forward(model, x)
        actions[:, i] = a
        preds[:, i] = o_cur
        o_hist = o_hist[1:] + [o_cur]
        qr_hist = qr_hist[1:] + [qr_next]
        if i < h - 1:
            fut = fut[1:] + [qstar_ext[:, i]]
    return actions, preds


def model_rollout(params: NetworkParams, obs_hist, qr_hist, refs) -> np.ndarray:
    """Single-window h-step rollout: histories (h+1, .), driving refs (h, 4)."""
    preds = model_rollout_batch(params, np.asarray(obs_hist)[None],
                                np.asarray(qr_hist)[None], np.asarray(refs)[None])
    return preds[0]


def policy_rollout(policy: NetworkParams, model: NetworkParams, obs_hist, qr_hist,
                   qstar_future):
    """Single-window policy rollout; qstar_future holds q*_{t+1 .. t+2h-1} (or more)."""
    h = policy_input_dim_to_h(policy.spec.input_dim)
    qstar_future = np.asarray(qstar_future)
    if len(qstar_future) < 2 * h - 1:
        raise ValueError(f"need at least {2 * h - 1} future desired positions")
    actions, preds = policy_rollout_batch(
        policy, model, np.asarray(obs_hist)[None], np.asarray(qr_hist)[None],
        qstar_future[None, :h], qstar_future[None, h:2 * h - 1])
    return actions[0], preds[0]


def policy_input_dim_to_h(dim: int) -> int:
    h, rem = divmod(dim - 12, 16)
    if rem or h < 1:
        raise ValueError(f"{dim} is not a valid policy input width")
    return h


# ---------------------------------------------------------------------------
# losses (plain versions; the training loop builds the same sums on the tape)


def model_loss(predictions, targets, params: Optional[NetworkParams], weight_decay: float) -> float:
    """(1/h) sum_i ||pred_i - target_i||^2 + w ||theta||^2 (affine weights/biases)."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError("prediction/target shape mismatch")
    h = predictions.shape[0]
    data = float(((predictions - targets) ** 2).sum(axis=1).sum()) / h
    reg = weight_decay * params.weight_sumsq() if params is not None else 0.0
    return data + reg


def policy_loss(predictions, qstar, actions, gamma: float, k_smooth: float) -> float:
    """Discounted position tracking error plus action-differential regularization."""
    predictions = np.asarray(predictions)
    qstar = np.asarray(qstar)
    actions = np.asarray(actions)
    h = predictions.shape[0]
    qhat = predictions[:, :4]
    track = sum(gamma ** (i + 1) * float(((qhat[i] - qstar[i]) ** 2).sum())
                for i in range(h)) / h
    if h >= 2:
        diffs = np.diff(actions, axis=0)
        reg = k_smooth * float((diffs ** 2).sum(axis=1).sum()) / (h - 1)
    else:
        reg = 0.0
    return track + reg


# ---------------------------------------------------------------------------
# evaluation helpers shared by training curves and the metric drivers


def model_prediction_mae(params: NetworkParams, dataset: Dataset, h: int,
                         batch_size: int = 2048, per_source: bool = False):
    """h-step rollout position MAE (radians) against recorded observations."""
    idx = WindowIndex(dataset, h)
    return _prediction_mae(idx, h, batch_size, per_source,
                           lambda b: model_rollout_batch(params, b["o_hist"], b["qr_hist"],
                                                         b["qr_next"]))


def persistence_mae(dataset: Dataset, h: int, batch_size: int = 2048,
                    per_source: bool = False):
    """Same pooling for the no-change predictor (o stays at o_t)."""
    idx = WindowIndex(dataset, h)

    def predict(b):
        return np.repeat(b["o_hist"][:, -1][:, None, :], h, axis=1)

    return _prediction_mae(idx, h, batch_size, per_source, predict)


def _prediction_mae(idx: WindowIndex, h: int, batch_size: int, per_source: bool, predict):
    if len(idx) == 0:
        raise ValueError("dataset has no valid windows for this horizon")
    err_sum, err_n = {}, {}
    for start in range(0, len(idx), batch_size):
        sel = np.arange(start, min(start + batch_size, len(idx)))
        batch = idx.gather(sel)
        preds = predict(batch)
        err = np.abs(preds[:, :, :4] - batch["o_tgt"][:, :, :4])
        for g in np.unique(batch["group"]):
            m = batch["group"] == g
            src = idx.sources[g]
            err_sum[src] = err_sum.get(src, 0.0) + float(err[m].sum())
            err_n[src] = err_n.get(src, 0) + int(err[m].size)
    per = {src: err_sum[src] / err_n[src] for src in err_sum}
    overall = sum(err_sum.values()) / sum(err_n.values())
    return (overall, per) if per_source else overall


def policy_tracking_mae(policy: NetworkParams, model: NetworkParams, dataset: Dataset,
                        h: int, batch_size: int = 2048) -> float:
    """Model-predicted tracking MAE of the policy over dataset windows (radians)."""
    idx = WindowIndex(dataset, h)
    if len(idx) == 0:
        raise ValueError("dataset has no valid windows for this horizon")
    tot, n = 0.0, 0
    for start in range(0, len(idx), batch_size):
        sel = np.arange(start, min(start + batch_size, len(idx)))
        batch = idx.gather(sel, policy=True)
        _actions, preds = policy_rollout_batch(policy, model, batch["o_hist"],
                                               batch["qr_hist"], batch["qstar_tgt"],
                                               batch["qstar_ext"])
        err = np.abs(preds[:, :, :4] - batch["qstar_tgt"])
        tot += float(err.sum())
        n += err.size
    return tot / n


# ---------------------------------------------------------------------------
# training loops


def _decayed_gradients(net: TracedNet, params: NetworkParams, w: float) -> dict:
    grads = net.grads()
    if w > 0:
        arrays = dict(params.param_items())
        for name in params.decayed_names():
            grads[name] = grads[name] + 2.0 * w * arrays[name]
    return grads


def train_model(dataset: Dataset, cfg: TrainConfig, holdout: Optional[Dataset] = None,
                init: Optional[NetworkParams] = None, log=None):
    """TrainModel: h-step BPTT over shuffled windows, Adam updates per batch.

    Returns (params, curve); curve rows are dicts with the epoch train loss
    and, when a holdout dataset is given, its h-step position MAE.
    """
    idx = WindowIndex(dataset, cfg.h)
    if len(idx) == 0:
        raise ValueError("dataset too short for the training horizon")
    if init is not None:
        params = init.copy()
        if params.spec != _model_spec(cfg):
            raise ValueError("warm-start parameters disagree with the configured architecture")
    else:
        mean, std = model_norm_stats(idx, cfg.h)
        params = init_params(_model_spec(cfg), [cfg.seed, 0x11], mean, std)
    state = adam_init(params, lr=cfg.lr)
    curve = []
    prev = params
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, 0xE0, epoch]).permutation(len(idx))
        loss_sum, n_win = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            batch = idx.gather(sel)
            tp = T.Tape()
            net = TracedNet(tp, params, trainable=True)
            preds = _traced_model_rollout(tp, net, batch, cfg.h)
            loss = _traced_model_loss(tp, preds, batch, cfg.h)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(
                    f"model loss non-finite in epoch {epoch}", last_good=prev)
            tp.backward(loss)
            params, state = adam_step(params, _decayed_gradients(net, params, cfg.weight_decay),
                                      state)
            loss_sum += float(loss.value) * len(sel)
            n_win += len(sel)
        row = {"epoch": epoch, "train_loss": loss_sum / n_win}
        if holdout is not None:
            row["holdout_mae"] = model_prediction_mae(params, holdout, cfg.h)
        curve.append(row)
        if log is not None:
            log(f"[model] epoch {epoch:4d}  loss {row['train_loss']:.3e}"
                + (f"  holdout MAE {row['holdout_mae']:.5f} rad" if holdout is not None else ""))
        prev = params
    return params, curve


def train_policy(dataset: Dataset, model: NetworkParams, cfg: TrainConfig,
                 holdout: Optional[Dataset] = None, init: Optional[NetworkParams] = None,
                 log=None):
    """TrainPolicy: BPTT through the frozen model into the policy at every step.

    Returns (params, curve); curve rows log L_track, L_reg and the
    model-predicted tracking MAE on training windows (plus holdout windows
    when given).
    """
    if cfg.h < 2:
        raise ValueError("policy training needs h >= 2 for the smoothness term")
    idx = WindowIndex(dataset, cfg.h)
    if len(idx) == 0:
        raise ValueError("dataset too short for the training horizon")
    if model.spec != _model_spec(cfg):
        raise ValueError("model checkpoint disagrees with the configured architecture")
    if init is not None:
        params = init.copy()
        if params.spec != _policy_spec(cfg):
            raise ValueError("warm-start parameters disagree with the configured architecture")
    else:
        mean, std = policy_norm_stats(idx, cfg.h)
        params = init_params(_policy_spec(cfg), [cfg.seed, 0x22], mean, std)
    state = adam_init(params, lr=cfg.lr)
    curve = []
    prev = params
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, 0xF0, epoch]).permutation(len(idx))
        track_sum = reg_sum = mae_sum = 0.0
        n_win = mae_n = 0
        for start in range(0, len(perm), cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            batch = idx.gather(sel, policy=True)
            tp = T.Tape()
            policy_net = TracedNet(tp, params, trainable=True)
            model_net = TracedNet(tp, model, trainable=False)
            actions, preds = _traced_policy_rollout(tp, policy_net, model_net, batch, cfg.h)
            loss, track_terms, reg_terms = _traced_policy_loss(
                tp, preds, actions, batch, cfg.h, cfg.gamma, cfg.k_smooth)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(
                    f"policy loss non-finite in epoch {epoch}", last_good=prev)
            tp.backward(loss)
            if model_net.max_abs_grad() != 0.0:
                raise AssertionError("frozen model accumulated gradients")
            params, state = adam_step(params, _decayed_gradients(policy_net, params, 0.0),
                                      state)
            track_sum += sum(float(t.value) for t in track_terms) * len(sel)
            reg_sum += sum(float(t.value) for t in reg_terms) * len(sel)
            err = np.abs(np.stack([p.value[:, :4] for p in preds], axis=1)
                         - batch["qstar_tgt"])
            mae_sum += float(err.sum())
            mae_n += err.size
            n_win += len(sel)
        row = {
            "epoch": epoch,
            "l_track": track_sum / n_win,
            "l_reg": reg_sum / n_win,
            "po_mae": mae_sum / mae_n,
        }
        if holdout is not None:
            row["po_mae_holdout"] = policy_tracking_mae(params, model, holdout, cfg.h)
        curve.append(row)
        if log is not None:
            log(f"[policy] epoch {epoch:4d}  L_track {row['l_track']:.3e}  "
                f"L_reg {row['l_reg']:.3e}  Po.MAE {row['po_mae']:.5f} rad")
        prev = params
    return params, curve
