# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
import math
import unittest

import numpy as np
import pytest  # pylint: disable=import-error

from spooftrace.errors import DimensionError, NumericError
from spooftrace.optimizer import AdamState, gradients, optimizer_update
from spooftrace.tensor import Tensor


def _reference_adam(value: float, grads, lr: float) -> float:
    "Scalar Adam with beta1 = 0.5, beta2 = 0.999, eps = 1e-8"
    m = v = 0.0
    for step, grad in enumerate(grads, start=1):
        m = 0.5 * m + 0.5 * grad
        v = 0.999 * v + 0.001 * grad * grad
        m_hat = m / (1.0 - 0.5**step)
        v_hat = v / (1.0 - 0.999**step)
        value -= lr * m_hat / (math.sqrt(v_hat) + 1e-8)

    return value


class TestOptimizer(unittest.TestCase):
    def test_three_steps_match_scalar_reference(self):
        # arrange
        param = Tensor(np.array([1.0]), requires_grad=True)
        moments = AdamState.of([param])
        grads = [1.0, 0.5, -2.0]

        # act
        for grad in grads:
            moments = optimizer_update([param], [np.array([grad])], 0.1, moments)

        # assert
        self.assertEqual(3, moments.step)
        expected = _reference_adam(1.0, grads, 0.1)
        self.assertAlmostEqual(expected, float(param.data[0]), places=12)

    def test_constant_gradient_moves_by_the_learning_rate(self):
        # arrange
        param = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        moments = AdamState.of([param])

        # act
        for _ in range(3):
            moments = optimizer_update([param], [np.array([0.5, -4.0])], 0.1, moments)

        # assert
        np.testing.assert_allclose([0.7, -0.7], param.data, atol=1e-6)

    def test_zero_gradients_leave_parameters_unchanged(self):
        # arrange
        param = Tensor(np.array([0.3, -2.0]), requires_grad=True)
        moments = AdamState.of([param])

        # act
        moments = optimizer_update([param], [np.zeros(2)], 0.1, moments)

        # assert
        np.testing.assert_array_equal([0.3, -2.0], param.data)
        self.assertEqual(1, moments.step)

    def test_update_rebinds_parameters(self):
        # arrange
        param = Tensor(np.array([1.0]), requires_grad=True)
        handed_out = param.data

        # act
        optimizer_update([param], [np.array([1.0])], 0.1, AdamState.of([param]))

        # assert
        np.testing.assert_array_equal([1.0], handed_out)
        self.assertIsNot(handed_out, param.data)

    def test_non_finite_gradient_updates_nothing(self):
        # arrange
        first = Tensor(np.array([1.0]), requires_grad=True)
        second = Tensor(np.array([2.0]), requires_grad=True)
        moments = AdamState.of([first, second])

        # act / assert
        with pytest.raises(NumericError):
            grads = [np.array([1.0]), np.array([np.nan])]
            optimizer_update([first, second], grads, 0.1, moments)
        np.testing.assert_array_equal([1.0], first.data)
        np.testing.assert_array_equal([2.0], second.data)
        self.assertEqual(0, moments.step)

    def test_mismatching_inputs_are_rejected(self):
        # arrange
        param = Tensor(np.zeros(2), requires_grad=True)
        moments = AdamState.of([param])

        # act / assert
        with pytest.raises(DimensionError):
            optimizer_update([param], [np.zeros(2), np.zeros(2)], 0.1, moments)
        with pytest.raises(DimensionError):
            optimizer_update([param], [np.zeros(3)], 0.1, moments)

    def test_gradients_fill_in_zeros(self):
        # arrange
        with_grad = Tensor(np.zeros(2), requires_grad=True)
        with_grad.grad = np.array([1.0, 2.0])
        without = Tensor(np.zeros(3))

        # act
        grads = gradients([with_grad, without])

        # assert
        np.testing.assert_array_equal([1.0, 2.0], grads[0])
        np.testing.assert_array_equal(np.zeros(3), grads[1])
