"""Checkpoint files: one self-describing JSON document per network.

Layout (format "mlp-checkpoint-v1"):
  kind        "model" or "policy"
  meta        free-form dict (horizon, config hash, ...)
  spec        MlpSpec fields, output_scale as a list
  norm_mean / norm_std   input standardization vectors
  layers      [{"w": [[...]], "b": [...], "ln_gain": [...], "ln_offset": [...]}, ...]
  output      {"w": [[...]], "b": [...]}

Floats are serialized with Python's shortest round-trip repr, so a save/load
cycle is bit-exact on every value.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .mlp import LayerParams, MlpSpec, NetworkParams

FORMAT = "mlp-checkpoint-v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(params: NetworkParams, path, kind: str = "model", meta: dict = None) -> None:
    doc = {
        "format": FORMAT,
        "kind": kind,
        "meta": meta or {},
        "spec": {
            "input_dim": params.spec.input_dim,
            "output_dim": params.spec.output_dim,
            "hidden_layers": params.spec.hidden_layers,
            "hidden_width": params.spec.hidden_width,
            "output_scale": list(params.spec.output_scale),
            "ln_eps": params.spec.ln_eps,
            "elu_alpha": params.spec.elu_alpha,
        },
        "norm_mean": params.norm_mean.tolist(),
        "norm_std": params.norm_std.tolist(),
        "layers": [
            {
                "w": l.w.tolist(),
                "b": l.b.tolist(),
                "ln_gain": l.ln_gain.tolist(),
                "ln_offset": l.ln_offset.tolist(),
            }
            for l in params.hidden
        ],
        "output": {"w": params.out_w.tolist(), "b": params.out_b.tolist()},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)


def _expect_shape(name: str, arr: np.ndarray, shape: tuple) -> np.ndarray:
    if arr.shape != shape:
        raise CheckpointError(f"{name}: expected shape {shape}, found {arr.shape}")
    return arr


def load_checkpoint(path, expect_spec: MlpSpec = None, expect_kind: str = None):
    """Read a checkpoint; returns (NetworkParams, kind, meta).

    When expect_spec is given, any disagreement is reported naming the first
    mismatched layer.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}")
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    kind = doc.get("kind", "model")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: kind is {kind!r}, expected {expect_kind!r}")
    s = doc["spec"]
    spec = MlpSpec(
        input_dim=int(s["input_dim"]),
        output_dim=int(s["output_dim"]),
        hidden_layers=int(s["hidden_layers"]),
        hidden_width=int(s["hidden_width"]),
        output_scale=tuple(float(x) for x in s["output_scale"]),
        ln_eps=float(s["ln_eps"]),
        elu_alpha=float(s["elu_alpha"]),
    )
    if expect_spec is not None:
        width = expect_spec.hidden_width
        prev = expect_spec.input_dim
        got_prev = spec.input_dim
        for i in range(max(spec.hidden_layers, expect_spec.hidden_layers)):
            if i >= spec.hidden_layers or i >= expect_spec.hidden_layers:
                raise CheckpointError(
                    f"layer {i}: expected {expect_spec.hidden_layers} hidden layers, "
                    f"checkpoint has {spec.hidden_layers}"
                )
            if (got_prev, spec.hidden_width) != (prev, width):
                raise CheckpointError(
                    f"layer {i}: expected weight shape ({prev}, {width}), "
                    f"checkpoint has ({got_prev}, {spec.hidden_width})"
                )
            prev, got_prev = width, spec.hidden_width
        if spec.output_dim != expect_spec.output_dim:
            raise CheckpointError(
                f"output layer: expected {expect_spec.output_dim} outputs, "
                f"checkpoint has {spec.output_dim}"
            )
    width = spec.hidden_width
    hidden = []
    prev = spec.input_dim
    for i, layer in enumerate(doc["layers"]):
        hidden.append(LayerParams(
            w=_expect_shape(f"layer {i} weight", np.asarray(layer["w"], dtype=np.float64),
                            (prev, width)),
            b=_expect_shape(f"layer {i} bias", np.asarray(layer["b"], dtype=np.float64), (width,)),
            ln_gain=_expect_shape(f"layer {i} ln_gain",
                                  np.asarray(layer["ln_gain"], dtype=np.float64), (width,)),
            ln_offset=_expect_shape(f"layer {i} ln_offset",
                                    np.asarray(layer["ln_offset"], dtype=np.float64), (width,)),
        ))
        prev = width
    if len(hidden) != spec.hidden_layers:
        raise CheckpointError(
            f"layer count mismatch: spec says {spec.hidden_layers}, file has {len(hidden)}"
        )
    params = NetworkParams(
        spec=spec,
        norm_mean=np.asarray(doc["norm_mean"], dtype=np.float64),
        norm_std=np.asarray(doc["norm_std"], dtype=np.float64),
        hidden=hidden,
        out_w=_expect_shape("output weight", np.asarray(doc["output"]["w"], dtype=np.float64),
                            (prev, spec.output_dim)),
        out_b=_expect_shape("output bias", np.asarray(doc["output"]["b"], dtype=np.float64),
                            (spec.output_dim,)),
    )
    return params, kind, doc.get("meta", {})
