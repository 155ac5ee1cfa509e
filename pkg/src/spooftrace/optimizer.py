# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Optimizer - Adam over lists of :py:class:`Tensor <spooftrace.tensor.Tensor>`
leaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from spooftrace.errors import DimensionError, NumericError
from spooftrace.tensor import Tensor

BETA1 = 0.5
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    """
    First and second moment estimates, one pair per parameter, and the
    number of updates taken so far
    """

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @staticmethod
    def of(params: Sequence[Tensor]) -> AdamState:
        return AdamState(
            [np.zeros_like(param.data) for param in params],
            [np.zeros_like(param.data) for param in params],
        )


def optimizer_update(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    lr: float,
    moments: AdamState,
) -> AdamState:
    """
    Take one Adam step (``beta1 = 0.5``, ``beta2 = 0.999``, ``eps = 1e-8``).
    Each parameter is rebound to a fresh array, arrays handed out earlier are
    left untouched.

    :raises NumericError: If any gradient is non-finite; nothing is updated
    :raises DimensionError: If params, grads and moments do not line up

    :return: The advanced moments
    """
    if not len(params) == len(grads) == len(moments.m):
        raise DimensionError(
            f"{len(params)} params, {len(grads)} grads, {len(moments.m)} moments"
        )
    for index, grad in enumerate(grads):
        if grad.shape != params[index].shape:
            raise DimensionError(f"grad {grad.shape} vs param {params[index].shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter {index}")

    step = moments.step + 1
    correction1 = 1.0 - BETA1**step
    correction2 = 1.0 - BETA2**step
    m_next, v_next = [], []
    for param, grad, m, v in zip(params, grads, moments.m, moments.v):
        m = BETA1 * m + (1.0 - BETA1) * grad
        v = BETA2 * v + (1.0 - BETA2) * grad * grad
        step_size = lr * (m / correction1) / (np.sqrt(v / correction2) + EPSILON)
        param.data = param.data - step_size
        m_next.append(m)
        v_next.append(v)

    return AdamState(m_next, v_next, step)


def gradients(params: Sequence[Tensor]) -> List[np.ndarray]:
    "The accumulated gradients, zeros for parameters that received none"
    return [
        param.grad if param.grad is not None else np.zeros_like(param.data)
        for param in params
    ]
