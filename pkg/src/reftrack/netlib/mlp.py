"""The MLP used for both the dynamics model and the adjustment policy.

Architecture: standardize input, then per hidden layer affine -> LayerNorm ->
ELU, then an affine output squashed by tanh and multiplied by a fixed
per-output scale.  The tanh keeps outputs strictly inside +-output_scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T

NORM_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_layers: int = 6
    hidden_width: int = 512
    output_scale: tuple = ()
    ln_eps: float = 1e-5
    elu_alpha: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("hidden_layers and hidden_width must be >= 1")
        if len(self.output_scale) != self.output_dim:
            raise ValueError(
                f"output_scale has {len(self.output_scale)} entries, need {self.output_dim}"
            )
        scale = np.asarray(self.output_scale, dtype=float)
        if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ValueError("output_scale entries must be positive and finite")


@dataclass
class LayerParams:
    w: np.ndarray
    b: np.ndarray
    ln_gain: np.ndarray
    ln_offset: np.ndarray


@dataclass
class NetworkParams:
    """All learnable arrays plus the frozen input-standardization statistics."""

    spec: MlpSpec
    norm_mean: np.ndarray
    norm_std: np.ndarray
    hidden: list
    out_w: np.ndarray
    out_b: np.ndarray

    def __post_init__(self):
        self.norm_mean = np.asarray(self.norm_mean, dtype=np.float64)
        self.norm_std = np.asarray(self.norm_std, dtype=np.float64)
        if self.norm_mean.shape != (self.spec.input_dim,):
            raise ValueError(f"norm_mean shape {self.norm_mean.shape} != ({self.spec.input_dim},)")
        if self.norm_std.shape != (self.spec.input_dim,):
            raise ValueError(f"norm_std shape {self.norm_std.shape} != ({self.spec.input_dim},)")
        if np.any(self.norm_std < NORM_STD_FLOOR):
            raise ValueError(f"norm_std components must be >= {NORM_STD_FLOOR}")
        width, prev = self.spec.hidden_width, self.spec.input_dim
        for i, layer in enumerate(self.hidden):
            if layer.w.shape != (prev, width):
                raise ValueError(f"layer {i}: weight shape {layer.w.shape} != ({prev}, {width})")
            prev = width
        if self.out_w.shape != (prev, self.spec.output_dim):
            raise ValueError(
                f"output layer: weight shape {self.out_w.shape} != ({prev}, {self.spec.output_dim})"
            )

    def param_items(self):
        """Ordered (name, array) pairs over every trainable array."""
        for i, layer in enumerate(self.hidden):
            yield f"h{i}.w", layer.w
            yield f"h{i}.b", layer.b
            yield f"h{i}.ln_gain", layer.ln_gain
            yield f"h{i}.ln_offset", layer.ln_offset
        yield "out.w", self.out_w
        yield "out.b", self.out_b

    def decayed_names(self):
        """Arrays covered by weight decay: affine weights and biases only."""
        names = []
        for i in range(len(self.hidden)):
            names += [f"h{i}.w", f"h{i}.b"]
        return names + ["out.w", "out.b"]

    def weight_sumsq(self) -> float:
        items = dict(self.param_items())
        return float(sum((items[n] ** 2).sum() for n in self.decayed_names()))

    def num_params(self) -> int:
        return int(sum(a.size for _n, a in self.param_items()))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            spec=self.spec,
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
            hidden=[LayerParams(l.w.copy(), l.b.copy(), l.ln_gain.copy(), l.ln_offset.copy())
                    for l in self.hidden],
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
        )

    def replaced(self, arrays: dict) -> "NetworkParams":
        """New NetworkParams with arrays taken from a name -> ndarray mapping."""
        return NetworkParams(
            spec=self.spec,
            norm_mean=self.norm_mean,
            norm_std=self.norm_std,
            hidden=[LayerParams(arrays[f"h{i}.w"], arrays[f"h{i}.b"],
                                arrays[f"h{i}.ln_gain"], arrays[f"h{i}.ln_offset"])
                    for i in range(len(self.hidden))],
            out_w=arrays["out.w"],
            out_b=arrays["out.b"],
        )


def init_params(spec: MlpSpec, seed, norm_mean=None, norm_std=None) -> NetworkParams:
    """Uniform +-sqrt(1/fan_in) weights, zero biases, identity LayerNorm.

    Keeps the tanh output near zero initially, i.e. the model starts out
    predicting "no residual" and the policy "no adjustment".
    """
    rng = np.random.default_rng(seed)
    dims = [spec.input_dim] + [spec.hidden_width] * spec.hidden_layers
    hidden = []
    for i in range(spec.hidden_layers):
        bound = np.sqrt(1.0 / dims[i])
        w = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
        hidden.append(LayerParams(
            w=w,
            b=np.zeros(dims[i + 1]),
            ln_gain=np.ones(dims[i + 1]),
            ln_offset=np.zeros(dims[i + 1]),
        ))
    bound = np.sqrt(1.0 / dims[-1])
    out_w = rng.uniform(-bound, bound, size=(dims[-1], spec.output_dim))
    if norm_mean is None:
        norm_mean = np.zeros(spec.input_dim)
    if norm_std is None:
        norm_std = np.ones(spec.input_dim)
    return NetworkParams(
        spec=spec,
        norm_mean=np.asarray(norm_mean, dtype=np.float64),
        norm_std=np.maximum(np.asarray(norm_std, dtype=np.float64), NORM_STD_FLOOR),
        hidden=hidden,
        out_w=out_w,
        out_b=np.zeros(spec.output_dim),
    )


def zeroed_params(spec: MlpSpec) -> NetworkParams:
    """All-zero weights/biases (identity LayerNorm): the network output is exactly 0."""
    p = init_params(spec, seed=0)
    for layer in p.hidden:
        layer.w[:] = 0.0
        layer.b[:] = 0.0
    p.out_w[:] = 0.0
    p.out_b[:] = 0.0
    return p


def forward(params: NetworkParams, x) -> np.ndarray:
    """Plain (non-taped) forward pass; accepts one input (d,) or a batch (B, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"input has {X.shape[-1] if X.ndim else 0} columns, expected {params.spec.input_dim}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    Y = _forward_core(params, X)
    return Y[0] if single else Y


def _forward_core(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    # mirrors TracedNet.apply expression by expression so both paths agree bitwise
    spec = params.spec
    inv_std = 1.0 / params.norm_std
    H = X + (-params.norm_mean)
    H *= inv_std
    for layer in params.hidden:
        inv_n = 1.0 / layer.w.shape[1]
        A = H @ layer.w
        A += layer.b
        A -= np.einsum("ij->i", A)[:, None] * inv_n
        var = np.einsum("ij,ij->i", A, A)[:, None] * inv_n
        A *= 1.0 / np.sqrt(var + spec.ln_eps)
        Y = A * layer.ln_gain
        Y += layer.ln_offset
        H = np.where(Y > 0.0, Y, spec.elu_alpha * np.expm1(Y))
    out = np.tanh(H @ params.out_w + params.out_b)
    return out * np.asarray(spec.output_scale)


class TracedNet:
    """A network bound to a tape; parameters become Vars shared across applications.

    With trainable=False the parameter Vars never accumulate gradients (the
    frozen-model contract), while gradients still flow through to the inputs.
    """

    def __init__(self, tape_obj: T.Tape, params: NetworkParams, trainable: bool = True):
        self.tape = tape_obj
        self.params = params
        self.trainable = trainable
        mk = T.parameter if trainable else T.constant
        self._hidden = [
            (mk(l.w), mk(l.b), mk(l.ln_gain), mk(l.ln_offset)) for l in params.hidden
        ]
        self._out_w = mk(params.out_w)
        self._out_b = mk(params.out_b)
        self._mean = params.norm_mean
        self._inv_std = 1.0 / params.norm_std
        self._scale = np.asarray(params.spec.output_scale)

    def apply(self, x: T.Var) -> T.Var:
        spec = self.params.spec
        h = T.affine_const(self.tape, x, -self._mean, self._inv_std)
        for (w, b, gain, offset) in self._hidden:
            h = T.hidden_layer(self.tape, h, w, b, gain, offset,
                               eps=spec.ln_eps, alpha=spec.elu_alpha)
        return T.output_layer(self.tape, h, self._out_w, self._out_b, self._scale)

    def param_vars(self):
        for i, (w, b, gain, offset) in enumerate(self._hidden):
            yield f"h{i}.w", w
            yield f"h{i}.b", b
            yield f"h{i}.ln_gain", gain
            yield f"h{i}.ln_offset", offset
        yield "out.w", self._out_w
        yield "out.b", self._out_b

    def grads(self) -> dict:
        """name -> gradient array (zeros where nothing was accumulated)."""
        return {name: var.grad_or_zeros() for name, var in self.param_vars()}

    def max_abs_grad(self) -> float:
        vals = [np.abs(v.grad).max() for _n, v in self.param_vars() if v.grad is not None]
        return float(max(vals)) if vals else 0.0


def standardize_stats(X: np.ndarray):
    """(mean, std) per column with the std floored for numerical safety."""
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), NORM_STD_FLOOR)
    return mean, std
