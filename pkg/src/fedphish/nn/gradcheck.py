"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ConfigurationError, NumericError
from .autograd import Tensor, backward, param_tensors
from .params import ParamSet

LossFn = Callable[[dict, object], Tensor]


def analytic_gradients(loss_fn: LossFn, params: ParamSet, inputs) -> tuple[float, ParamSet]:
    leaves, grads = param_tensors(params)
    loss = loss_fn(leaves, inputs)
    backward(loss)
    return loss.item(), grads


def numeric_gradients(loss_fn: LossFn, params: ParamSet, inputs, eps: float = 1e-5) -> ParamSet:
    probe = params.copy()
    leaves = {name: Tensor(arr) for name, arr in probe.items()}
    out = params.zeros_like()
    flat = probe.flat
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn(leaves, inputs).item()
        flat[i] = orig - eps
        down = loss_fn(leaves, inputs).item()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while probing parameter {i}")
        out.flat[i] = (up - down) / (2.0 * eps)
    return out


DENOMINATOR_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(loss_fn: LossFn, params: ParamSet, inputs, eps: float = 1e-5,
                      analytic: ParamSet | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn(leaves, inputs)`` must rebuild the scalar loss from the
    name->Tensor mapping each time it is called. Pass ``analytic`` to check a
    gradient produced elsewhere (fault-injection tests do this).
    """
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    if analytic is None:
        value, analytic = analytic_gradients(loss_fn, params, inputs)
        if not np.isfinite(value):
            raise NumericError("loss is not finite at the probe point")
    numeric = numeric_gradients(loss_fn, params, inputs, eps)
    if params.size == 0:
        return 0.0
    return float(relative_error(analytic.flat, numeric.flat).max())
