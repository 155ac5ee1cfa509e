# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
import unittest
from dataclasses import replace

import numpy as np
import pytest  # pylint: disable=import-error

from spooftrace.errors import DimensionError
from spooftrace.models import (
    BatchNormMode,
    ModelConfig,
    count_parameters,
    discriminator_forward,
    frozen,
    generator_forward,
    init_weights,
)
from spooftrace.tensor import Tensor, backward, sum_
from tests.fixtures import TINY_MODEL, rng

SIZE = TINY_MODEL.image_size


def _faces(batch: int = 2) -> Tensor:
    return Tensor(rng().uniform(size=(batch, SIZE, SIZE, 3)))


class TestModels(unittest.TestCase):
    def test_generator_produces_trace_elements_and_spoof_map(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)

        # act
        out = generator_forward(networks.generator, _faces(3))

        # assert
        elements = out.elements
        self.assertEqual((3, 1, 1, 3), elements.s_color.shape)
        self.assertEqual((3, 1, 1, 3), elements.b.shape)
        self.assertEqual((3, SIZE // 4, SIZE // 4, 3), elements.C.shape)
        self.assertEqual((3, SIZE, SIZE, 3), elements.T.shape)
        self.assertEqual((3, SIZE // 16, SIZE // 16), out.spoof_map.shape)
        self.assertTrue(np.all((out.spoof_map.data > 0.0) & (out.spoof_map.data < 1.0)))
        self.assertTrue(np.all(np.abs(elements.T.data) < 0.5))
        self.assertTrue(np.all(np.abs(elements.s_color.data) < 1.0))

    def test_discriminators_judge_three_resolutions(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)

        # act
        maps = discriminator_forward(networks.discriminator, _faces())

        # assert
        shapes = [m.shape for m in maps]
        self.assertEqual([(2, 4, 4, 2), (2, 2, 2, 2), (2, 1, 1, 2)], shapes)

    def test_discriminator_parameter_count(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)

        # act
        count = count_parameters(networks.discriminator.layers())

        # assert
        # per network: 3->2 conv, five 2->2 convs, the 2->2 head; 3x3 kernels, biases
        self.assertEqual(3 * (56 + 5 * 38 + 38), count)

    def test_single_layer_trace_keeps_texture_only(self):
        # arrange
        networks = init_weights(rng(), replace(TINY_MODEL, single_layer_trace=True))

        # act
        elements = generator_forward(networks.generator, _faces()).elements

        # assert
        for element in (elements.s_color, elements.b, elements.C):
            np.testing.assert_array_equal(np.zeros(element.shape), element.data)
        self.assertGreater(float(np.abs(elements.T.data).max()), 0.0)

    def test_init_weights_is_deterministic_per_seed(self):
        # arrange
        seed = int(rng().integers(0, 1000))

        # act
        first = init_weights(np.random.default_rng(seed), TINY_MODEL)
        second = init_weights(np.random.default_rng(seed), TINY_MODEL)

        # assert
        for a, b in zip(first.generator.parameters(), second.generator.parameters()):
            np.testing.assert_array_equal(a.data, b.data)
        for a, b in zip(
            first.discriminator.parameters(), second.discriminator.parameters()
        ):
            np.testing.assert_array_equal(a.data, b.data)

    def test_update_mode_moves_running_statistics_and_batch_mode_does_not(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)
        norms = networks.generator.norms()
        before = [norm.running.mean.copy() for norm in norms]

        # act
        generator_forward(networks.generator, _faces(), BatchNormMode.BATCH)
        unchanged = [norm.running.mean.copy() for norm in norms]
        generator_forward(networks.generator, _faces(), BatchNormMode.UPDATE)
        after = [norm.running.mean for norm in norms]

        # assert
        for old, same in zip(before, unchanged):
            np.testing.assert_array_equal(old, same)
        self.assertTrue(
            any(not np.array_equal(old, new) for old, new in zip(before, after))
        )

    def test_gradients_reach_every_generator_parameter(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)

        # act
        out = generator_forward(networks.generator, _faces(), BatchNormMode.BATCH)
        elements = out.elements
        backward(
            sum_(out.spoof_map)
            + sum_(elements.s_color)
            + sum_(elements.b)
            + sum_(elements.C)
            + sum_(elements.T)
        )

        # assert
        grads = [param.grad for param in networks.generator.parameters()]
        self.assertTrue(all(np.any(grad) for grad in grads))

    def test_frozen_excludes_parameters_and_restores_them(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)
        params = networks.discriminator.parameters()
        faces = Tensor(rng().uniform(size=(2, SIZE, SIZE, 3)), requires_grad=True)

        # act
        with frozen(params):
            backward(sum_(discriminator_forward(networks.discriminator, faces)[0]))
            inside = [param.requires_grad for param in params]

        # assert
        self.assertFalse(any(inside))
        self.assertTrue(all(param.requires_grad for param in params))
        self.assertTrue(all(not np.any(param.grad) for param in params))
        self.assertTrue(np.any(faces.grad))

    def test_frozen_restores_flags_on_error(self):
        # arrange
        params = init_weights(rng(), TINY_MODEL).discriminator.parameters()

        # act
        with pytest.raises(RuntimeError):
            with frozen(params):
                raise RuntimeError("boom")

        # assert
        self.assertTrue(all(param.requires_grad for param in params))

    def test_networks_reject_unsupported_sizes(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)

        # act / assert
        with pytest.raises(DimensionError):
            generator_forward(networks.generator, Tensor(np.zeros((1, 24, 24, 3))))
        with pytest.raises(DimensionError):
            discriminator_forward(
                networks.discriminator, Tensor(np.zeros((1, 16, 16, 3)))
            )
        with pytest.raises(DimensionError):
            generator_forward(networks.generator, Tensor(np.zeros((1, SIZE, SIZE, 1))))

    def test_spoof_map_ignores_the_decoder(self):
        # arrange
        networks = init_weights(rng(), TINY_MODEL)
        faces = _faces()
        before = generator_forward(networks.generator, faces).spoof_map.data.copy()

        # act
        for layer in networks.generator.decoder_layers():
            for param in layer.parameters():
                param.data[...] = 0.0
        out = generator_forward(networks.generator, faces)

        # assert
        np.testing.assert_array_equal(before, out.spoof_map.data)
        for element in out.elements.elements():
            np.testing.assert_array_equal(np.zeros(element.shape), element.data)

    def test_kernels_start_at_the_configured_spread(self):
        # act
        networks = init_weights(rng(), ModelConfig())

        # assert
        layers = networks.generator.layers() + networks.discriminator.layers()
        kernels = np.concatenate([layer.kernel.data.ravel() for layer in layers])
        self.assertGreaterEqual(kernels.size, 100_000)
        self.assertAlmostEqual(0.02, float(kernels.std()), delta=0.001)
        self.assertAlmostEqual(0.0, float(kernels.mean()), delta=0.001)
        self.assertTrue(all(not np.any(layer.bias.data) for layer in layers))
