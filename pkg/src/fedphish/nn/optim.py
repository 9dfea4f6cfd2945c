"""Adam (default) and plain SGD over flat :class:`ParamSet` buffers."""

from __future__ import annotations

from dataclasses import dataclass

from .. import kernels
from .params import Gradients, ParamSet

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class OptimizerState:
    m: ParamSet
    v: ParamSet
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamSet) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.step)


def adam_update_(params: ParamSet, grads: Gradients, state: OptimizerState, lr: float) -> None:
    """In-place Adam update of ``params`` and ``state``."""
    params.check_compatible(grads, "params and gradients")
    params.check_compatible(state.m, "params and optimizer moments")
    state.step += 1
    kernels.active.adam_update(
        params.flat, grads.flat, state.m.flat, state.v.flat,
        state.step, float(lr), BETA1, BETA2, EPSILON,
    )
    params.version += 1


def sgd_update_(params: ParamSet, grads: Gradients, state: OptimizerState, lr: float) -> None:
    params.check_compatible(grads, "params and gradients")
    params.flat -= lr * grads.flat
    params.version += 1
    state.step += 1


def adam_step(params: ParamSet, grads: Gradients, state: OptimizerState, lr: float):
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    new_params, new_state = params.copy(), state.copy()
    adam_update_(new_params, grads, new_state, lr)
    return new_params, new_state


def sgd_step(params: ParamSet, grads: Gradients, state: OptimizerState, lr: float):
    new_params, new_state = params.copy(), state.copy()
    sgd_update_(new_params, grads, new_state, lr)
    return new_params, new_state


OPTIMIZERS = {"adam": adam_step, "sgd": sgd_step}
IN_PLACE = {"adam": adam_update_, "sgd": sgd_update_}
