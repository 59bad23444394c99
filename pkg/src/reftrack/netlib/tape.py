"""Minimal reverse-mode autodiff over float64 numpy arrays.

The op set is exactly what the multi-step rollout losses need: affine,
LayerNorm, ELU, Tanh, constant affine (standardization / output scaling),
add/sub, column concat/slice, row-wise sum-of-squares means and weighted
scalar sums.  Ops are recorded on a tape in execution order, so walking the
tape backwards is already a valid topological order.

Values are either batched activations of shape (B, d), parameter arrays, or
scalar losses of shape ().  Everything is float64; gradients of a frozen
parameter are never accumulated, but gradients still flow through the ops it
participates in.
"""
from __future__ import annotations

import numpy as np


class NonFiniteLoss(RuntimeError):
    """Raised when a forward value turns non-finite; carries the first bad op."""

    def __init__(self, op_index: int, op_name: str):
        super().__init__(f"non-finite value first appears at op {op_index} ({op_name})")
        self.op_index = op_index
        self.op_name = op_name


class Var:
    """A tape value: ndarray payload plus an optionally-accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)


def _accum_fresh(var: Var, g: np.ndarray) -> None:
    # g is a newly allocated array owned by nobody else
    if var.grad is None:
        var.grad = g
    else:
        var.grad += g


def _accum_borrowed(var: Var, g: np.ndarray) -> None:
    # g aliases another gradient buffer (pass-through ops); copy on first use
    if var.grad is None:
        var.grad = g.copy()
    else:
        var.grad += g


class Tape:
    """Execution-ordered record of differentiable ops."""

    def __init__(self):
        self._ops = []  # (out Var, backward fn, name)

    def record(self, out: Var, backward, name: str) -> None:
        self._ops.append((out, backward, name))

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Var) -> None:
        """Accumulate d(loss)/d(x) into every requires_grad Var reachable from loss."""
        if loss.value.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.isfinite(loss.value):
            self.raise_first_nonfinite()
        loss.grad = np.ones((), dtype=np.float64)
        for out, fn, _name in reversed(self._ops):
            g = out.grad
            if g is None:
                continue
            fn(g)

    def raise_first_nonfinite(self) -> None:
        for idx, (out, _fn, name) in enumerate(self._ops):
            if not np.all(np.isfinite(out.value)):
                raise NonFiniteLoss(idx, name)
        raise NonFiniteLoss(-1, "loss (inputs already non-finite?)")


def constant(value) -> Var:
    return Var(value, requires_grad=False)


def parameter(value) -> Var:
    return Var(value, requires_grad=True)


def matmul(tape: Tape, x: Var, w: Var) -> Var:
    out = Var(x.value @ w.value, x.requires_grad or w.requires_grad)
    if out.requires_grad:
        xv, wv = x.value, w.value

        def backward(g):
            if x.requires_grad:
                _accum_fresh(x, g @ wv.T)
            if w.requires_grad:
                _accum_fresh(w, xv.T @ g)

        tape.record(out, backward, "matmul")
    return out


def add_bias(tape: Tape, x: Var, b: Var) -> Var:
    out = Var(x.value + b.value, x.requires_grad or b.requires_grad)
    if out.requires_grad:

        def backward(g):
            if x.requires_grad:
                _accum_borrowed(x, g)
            if b.requires_grad:
                _accum_fresh(b, g.sum(axis=0))

        tape.record(out, backward, "add_bias")
    return out


def add(tape: Tape, x: Var, y: Var) -> Var:
    out = Var(x.value + y.value, x.requires_grad or y.requires_grad)
    if out.requires_grad:

        def backward(g):
            if x.requires_grad:
                _accum_borrowed(x, g)
            if y.requires_grad:
                _accum_borrowed(y, g)

        tape.record(out, backward, "add")
    return out


def sub(tape: Tape, x: Var, y: Var) -> Var:
    out = Var(x.value - y.value, x.requires_grad or y.requires_grad)
    if out.requires_grad:

        def backward(g):
            if x.requires_grad:
                _accum_borrowed(x, g)
            if y.requires_grad:
                _accum_fresh(y, -g)

        tape.record(out, backward, "sub")
    return out


def affine_const(tape: Tape, x: Var, shift, scale) -> Var:
    """(x + shift) * scale with constant shift/scale (standardization, output scaling)."""
    val = x.value + shift
    val *= scale
    out = Var(val, x.requires_grad)
    if out.requires_grad:

        def backward(g):
            _accum_fresh(x, g * scale)

        tape.record(out, backward, "affine_const")
    return out


def elu(tape: Tape, x: Var, alpha: float = 1.0) -> Var:
    pos = x.value > 0.0
    val = np.where(pos, x.value, alpha * np.expm1(x.value))
    out = Var(val, x.requires_grad)
    if out.requires_grad:

        def backward(g):
            # d/dx elu = 1 for x > 0, alpha*exp(x) = value + alpha otherwise
            _accum_fresh(x, g * np.where(pos, 1.0, val + alpha))

        tape.record(out, backward, "elu")
    return out


def tanh(tape: Tape, x: Var) -> Var:
    val = np.tanh(x.value)
    out = Var(val, x.requires_grad)
    if out.requires_grad:

        def backward(g):
            _accum_fresh(x, g * (1.0 - val * val))

        tape.record(out, backward, "tanh")
    return out


def layer_norm(tape: Tape, x: Var, gain: Var, offset: Var, eps: float = 1e-5) -> Var:
    """Per-row normalization over the feature axis, then gain/offset."""
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Var(xhat * gain.value + offset.value,
              x.requires_grad or gain.requires_grad or offset.requires_grad)
    if out.requires_grad:

        def backward(g):
            if gain.requires_grad:
                _accum_fresh(gain, (g * xhat).sum(axis=0))
            if offset.requires_grad:
                _accum_fresh(offset, g.sum(axis=0))
            if x.requires_grad:
                gx = g * gain.value
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum_fresh(x, (gx - m1 - xhat * m2) * inv)

        tape.record(out, backward, "layer_norm")
    return out


def hidden_layer(tape: Tape, x: Var, w: Var, b: Var, gain: Var, offset: Var,
                 eps: float = 1e-5, alpha: float = 1.0) -> Var:
    """Fused affine -> LayerNorm -> ELU (one tape record; the hot path).

    Mathematically identical to composing matmul/add_bias/layer_norm/elu,
    which stay available for isolated gradient checks.  Buffers are reused in
    place, so mlp._forward_core must mirror the exact expression order.
    """
    inv_n = 1.0 / w.value.shape[1]
    A = x.value @ w.value
    A += b.value
    A -= np.einsum("ij->i", A)[:, None] * inv_n
    var = np.einsum("ij,ij->i", A, A)[:, None] * inv_n
    inv = 1.0 / np.sqrt(var + eps)
    A *= inv
    xhat = A
    Y = xhat * gain.value
    Y += offset.value
    pos = Y > 0.0
    val = np.where(pos, Y, alpha * np.expm1(Y))
    out = Var(val, x.requires_grad or w.requires_grad or b.requires_grad
              or gain.requires_grad or offset.requires_grad)
    if out.requires_grad:

        def backward(g):
            dY = g * np.where(pos, 1.0, val + alpha)
            if gain.requires_grad:
                _accum_fresh(gain, np.einsum("ij,ij->j", dY, xhat))
            if offset.requires_grad:
                _accum_fresh(offset, dY.sum(axis=0))
            dxhat = dY * gain.value
            m1 = np.einsum("ij->i", dxhat)[:, None] * inv_n
            m2 = np.einsum("ij,ij->i", dxhat, xhat)[:, None] * inv_n
            dA = dxhat
            dA -= m1
            dA -= xhat * m2
            dA *= inv
            if b.requires_grad:
                _accum_fresh(b, dA.sum(axis=0))
            if w.requires_grad:
                _accum_fresh(w, x.value.T @ dA)
            if x.requires_grad:
                _accum_fresh(x, dA @ w.value.T)

        tape.record(out, backward, "hidden_layer")
    return out


def output_layer(tape: Tape, x: Var, w: Var, b: Var, scale) -> Var:
    """Fused affine -> tanh -> elementwise output scaling."""
    th = np.tanh(x.value @ w.value + b.value)
    out = Var(th * scale, x.requires_grad or w.requires_grad or b.requires_grad)
    if out.requires_grad:

        def backward(g):
            dpre = g * scale * (1.0 - th * th)
            if b.requires_grad:
                _accum_fresh(b, dpre.sum(axis=0))
            if w.requires_grad:
                _accum_fresh(w, x.value.T @ dpre)
            if x.requires_grad:
                _accum_fresh(x, dpre @ w.value.T)

        tape.record(out, backward, "output_layer")
    return out


def concat_cols(tape: Tape, parts) -> Var:
    """Concatenate (B, d_i) vars along the feature axis."""
    out = Var(np.concatenate([p.value for p in parts], axis=1),
              any(p.requires_grad for p in parts))
    if out.requires_grad:
        widths = [p.value.shape[1] for p in parts]

        def backward(g):
            off = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    _accum_borrowed(p, g[:, off:off + w])
                off += w

        tape.record(out, backward, "concat_cols")
    return out


def slice_cols(tape: Tape, x: Var, start: int, stop: int) -> Var:
    out = Var(x.value[:, start:stop].copy(), x.requires_grad)
    if out.requires_grad:

        def backward(g):
            full = np.zeros_like(x.value)
            full[:, start:stop] = g
            _accum_fresh(x, full)

        tape.record(out, backward, "slice_cols")
    return out


def weighted_sq_err(tape: Tape, x: Var, target: np.ndarray, weight: float,
                    cols: int = None) -> Var:
    """weight * mean over rows of ||x[:, :cols] - target||^2 (fused loss term).

    Equivalent to slice_cols + sub + sumsq_rows_mean + scaling, recorded as a
    single op for the training hot path.
    """
    xv = x.value if cols is None else x.value[:, :cols]
    diff = xv - target
    rows = diff.shape[0]
    out = Var(np.float64(weight * (diff * diff).sum(axis=1).mean()), x.requires_grad)
    if out.requires_grad:

        def backward(g):
            dx = (2.0 * weight * float(g) / rows) * diff
            if cols is not None:
                full = np.zeros_like(x.value)
                full[:, :cols] = dx
                dx = full
            _accum_fresh(x, dx)

        tape.record(out, backward, "weighted_sq_err")
    return out


def weighted_sq_diff(tape: Tape, x: Var, y: Var, weight: float) -> Var:
    """weight * mean over rows of ||x - y||^2 (fused action-smoothness term)."""
    diff = x.value - y.value
    rows = diff.shape[0]
    out = Var(np.float64(weight * (diff * diff).sum(axis=1).mean()),
              x.requires_grad or y.requires_grad)
    if out.requires_grad:

        def backward(g):
            dx = (2.0 * weight * float(g) / rows) * diff
            if x.requires_grad:
                _accum_fresh(x, dx)
            if y.requires_grad:
                _accum_fresh(y, -dx)

        tape.record(out, backward, "weighted_sq_diff")
    return out


def sumsq_rows_mean(tape: Tape, x: Var) -> Var:
    """Mean over rows of the squared row norm: (1/B) sum_b ||x_b||^2 -> scalar."""
    rows = x.value.shape[0]
    out = Var(np.float64((x.value * x.value).sum(axis=1).mean()), x.requires_grad)
    if out.requires_grad:

        def backward(g):
            _accum_fresh(x, (2.0 * float(g) / rows) * x.value)

        tape.record(out, backward, "sumsq_rows_mean")
    return out


def weighted_sum(tape: Tape, terms, weights) -> Var:
    """Weighted sum of scalar vars -> scalar var."""
    total = np.float64(0.0)
    for t, w in zip(terms, weights):
        total = total + w * t.value
    out = Var(total, any(t.requires_grad for t in terms))
    if out.requires_grad:

        def backward(g):
            for t, w in zip(terms, weights):
                if t.requires_grad:
                    _accum_fresh(t, np.float64(w) * g)

        tape.record(out, backward, "weighted_sum")
    return out
