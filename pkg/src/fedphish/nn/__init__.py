from .autograd import (
    Tensor,
    add,
    attention_core,
    backward,
    cross_entropy,
    distillation,
    dropout,
    elman_rnn,
    linear,
    mean_axis,
    mul,
    multi_head_attention,
    param_tensors,
    per_example_cross_entropy,
    relu,
    reshape,
    softmax,
    tanh,
    total,
)
from .gradcheck import finite_diff_check
from .optim import IN_PLACE, OPTIMIZERS, OptimizerState, adam_step, adam_update_, sgd_step, sgd_update_
from .params import Gradients, ParamSet

__all__ = [
    "adam_step", "adam_update_", "add", "attention_core", "backward", "cross_entropy",
    "distillation", "dropout", "elman_rnn", "finite_diff_check", "Gradients", "IN_PLACE", "linear",
    "mean_axis", "mul", "multi_head_attention", "OPTIMIZERS", "OptimizerState", "param_tensors",
    "ParamSet", "per_example_cross_entropy", "relu", "reshape", "sgd_step", "sgd_update_",
    "softmax", "tanh", "Tensor", "total",
]
