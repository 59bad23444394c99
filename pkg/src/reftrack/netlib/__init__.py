"""Self-contained differentiable MLP stack: tape autodiff, networks, Adam, checkpoints."""
from . import tape
from .adam import AdamState, adam_init, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .mlp import (
    MlpSpec,
    NetworkParams,
    TracedNet,
    forward,
    init_params,
    standardize_stats,
    zeroed_params,
)
from .tape import NonFiniteLoss, Tape, Var

__all__ = [
    "tape", "Tape", "Var", "NonFiniteLoss",
    "MlpSpec", "NetworkParams", "TracedNet", "forward", "init_params",
    "standardize_stats", "zeroed_params",
    "AdamState", "adam_init", "adam_step",
    "CheckpointError", "save_checkpoint", "load_checkpoint",
]
