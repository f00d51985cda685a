"""Minimal float64 reverse-mode engine: tensors, MLPs, optimizers."""

from . import tensor as ops
from .gradcheck import grad_check
from .nn import (
    MlpSpec,
    ParamStore,
    forward_value,
    init_mlp,
    load_params,
    load_specs,
    mlp_forward,
    save_params,
    save_specs,
)
from .optim import OptimizerSpec, optimizer_step
from .tensor import Tape, Tensor

__all__ = [
    "MlpSpec",
    "OptimizerSpec",
    "ParamStore",
    "Tape",
    "Tensor",
    "forward_value",
    "grad_check",
    "init_mlp",
    "load_params",
    "load_specs",
    "mlp_forward",
    "ops",
    "optimizer_step",
    "save_params",
    "save_specs",
]
