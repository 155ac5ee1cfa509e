# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
import unittest

import numpy as np
import pytest  # pylint: disable=import-error

from spooftrace.errors import DimensionError
from spooftrace.tensor import Tensor, backward, sum_
from spooftrace.trace import (
    ELEMENT_TAGS,
    TraceElements,
    apply_hardening,
    draw_hardening,
    compose,
    harden,
    reconstruct_live,
    synthesize_batch,
    synthesize_spoof,
    trace_display,
)
from spooftrace.warp3d import LandmarkSet
from tests.fixtures import rng, square_landmarks

SIZE = 16


def _elements(
    generator: np.random.Generator, batch: int = 2, requires_grad: bool = False
) -> TraceElements:
    shapes = [
        (batch, 1, 1, 3),
        (batch, 1, 1, 3),
        (batch, SIZE // 4, SIZE // 4, 3),
        (batch, SIZE, SIZE, 3),
    ]
    return TraceElements(
        *(
            Tensor(generator.normal(size=shape), requires_grad=requires_grad)
            for shape in shapes
        )
    )


class TestTrace(unittest.TestCase):
    def test_zero_trace_composes_to_zero(self):
        # arrange
        image = rng().uniform(size=(2, SIZE, SIZE, 3))

        # act
        trace = compose(TraceElements.zeros(2, SIZE), image)

        # assert
        np.testing.assert_array_equal(np.zeros_like(image), trace.data)

    def test_compose_adds_gain_offset_content_and_texture(self):
        # arrange
        image = np.full((1, SIZE, SIZE, 3), 0.5)
        elements = TraceElements.of(
            np.full((1, 1, 1, 3), 0.2),
            np.full((1, 1, 1, 3), 0.1),
            np.full((1, SIZE // 4, SIZE // 4, 3), 0.05),
            np.full((1, SIZE, SIZE, 3), -0.01),
        )

        # act
        trace = compose(elements, image)

        # assert
        expected = np.full_like(image, 0.2 * 0.5 + 0.1 + 0.05 - 0.01)
        np.testing.assert_allclose(expected, trace.data)

    def test_reconstruct_live_removes_the_composed_trace(self):
        # arrange
        generator = rng()
        image = generator.uniform(size=(2, SIZE, SIZE, 3))
        elements = _elements(generator)

        # act
        live = reconstruct_live(image, elements)

        # assert
        np.testing.assert_allclose(image - compose(elements, image).data, live.data)

    def test_compose_differentiates_every_element(self):
        # arrange
        generator = rng()
        elements = _elements(generator, requires_grad=True)
        image = Tensor(generator.uniform(size=(2, SIZE, SIZE, 3)))

        # act
        backward(sum_(compose(elements, image)))

        # assert
        np.testing.assert_allclose(
            image.data.sum(axis=(1, 2), keepdims=True), elements.s_color.grad
        )
        np.testing.assert_allclose(np.full((2, 1, 1, 3), SIZE * SIZE), elements.b.grad)
        np.testing.assert_allclose(np.ones((2, SIZE, SIZE, 3)), elements.T.grad)
        # every output pixel hands out a unit of gradient over its source pixels
        self.assertAlmostEqual(2 * 3 * SIZE * SIZE, float(elements.C.grad.sum()))

    def test_compose_rejects_mismatching_sizes(self):
        # arrange
        elements = _elements(rng())

        # act / assert
        with pytest.raises(DimensionError):
            compose(elements, np.zeros((2, SIZE * 2, SIZE * 2, 3)))

    def test_apply_hardening_zeroes_exactly_the_chosen_element(self):
        # arrange
        elements = _elements(rng(), batch=4)
        choices = np.arange(4)

        # act
        hardened = apply_hardening(elements, choices)

        # assert
        for sample, dropped in enumerate(choices):
            pairs = zip(elements.elements(), hardened.elements())
            for tag, (before, after) in enumerate(pairs):
                expected = (
                    np.zeros_like(before.data[sample])
                    if tag == dropped
                    else before.data[sample]
                )
                np.testing.assert_array_equal(expected, after.data[sample])

    def test_harden_draws_one_element_per_sample(self):
        # arrange
        shapes = [element.shape for element in _elements(rng(), batch=64).elements()]
        elements = TraceElements.of(*(np.ones(shape) for shape in shapes))

        # act
        hardened = harden(elements, rng())

        # assert
        zeroed = np.stack(
            [
                element.data.reshape(64, -1).max(axis=1) == 0.0
                for element in hardened.elements()
            ]
        )
        np.testing.assert_array_equal(np.ones(64), zeroed.sum(axis=0))
        self.assertEqual(len(ELEMENT_TAGS), zeroed.shape[0])

    def test_apply_hardening_needs_one_choice_per_sample(self):
        # act / assert
        with pytest.raises(DimensionError):
            apply_hardening(_elements(rng()), np.zeros(3, dtype=int))

    def test_synthesize_spoof_with_identical_landmarks_adds_the_trace(self):
        # arrange
        generator = rng()
        live = generator.uniform(size=(SIZE, SIZE, 3))
        trace = Tensor(generator.normal(scale=0.1, size=(SIZE, SIZE, 3)))
        landmarks = square_landmarks(SIZE)

        # act
        synthesized = synthesize_spoof(live, landmarks, trace, landmarks)

        # assert
        np.testing.assert_allclose(
            trace.data, synthesized.warped_trace.data, atol=1e-12
        )
        np.testing.assert_allclose(
            live + trace.data, synthesized.image.data, atol=1e-12
        )

    def test_synthesize_batch_pairs_samples_in_order(self):
        # arrange
        generator = rng()
        live = Tensor(generator.uniform(size=(2, SIZE, SIZE, 3)))
        traces = Tensor(generator.normal(size=(2, SIZE, SIZE, 3)))
        landmarks = (square_landmarks(SIZE), square_landmarks(SIZE))

        # act
        synthesized = synthesize_batch(live, landmarks, traces, landmarks)

        # assert
        np.testing.assert_allclose(
            live.data + traces.data, synthesized.image.data, atol=1e-12
        )

    def test_synthesize_spoof_rejects_mismatching_shapes(self):
        # arrange
        landmarks = square_landmarks(SIZE)

        # act / assert
        with pytest.raises(DimensionError):
            synthesize_spoof(
                np.zeros((SIZE, SIZE, 3)),
                landmarks,
                Tensor(np.zeros((SIZE, SIZE, 1))),
                landmarks,
            )

    def test_offset_alone_shifts_one_channel(self):
        # arrange
        image = rng().uniform(size=(1, SIZE, SIZE, 3))
        elements = TraceElements.of(
            np.zeros((1, 1, 1, 3)),
            np.array([0.1, 0.0, 0.0]).reshape(1, 1, 1, 3),
            np.zeros((1, SIZE // 4, SIZE // 4, 3)),
            np.zeros((1, SIZE, SIZE, 3)),
        )

        # act
        trace = compose(elements, image)

        # assert
        np.testing.assert_allclose(np.full((SIZE, SIZE), 0.1), trace.data[0, :, :, 0])
        np.testing.assert_array_equal(
            np.zeros((SIZE, SIZE, 2)), trace.data[0, :, :, 1:]
        )

    def test_reconstruction_plus_trace_gives_the_input_back(self):
        # arrange
        generator = rng()
        image = generator.uniform(size=(2, SIZE, SIZE, 3))
        elements = _elements(generator)

        # act
        live = reconstruct_live(image, elements)
        unchanged = reconstruct_live(image, TraceElements.zeros(2, SIZE))

        # assert
        restored = live.data + compose(elements, image).data
        np.testing.assert_allclose(image, restored, atol=1e-12)
        np.testing.assert_array_equal(image, unchanged.data)

    def test_constant_trace_survives_any_warp_inside_the_hull(self):
        # arrange
        generator = rng()
        live = generator.uniform(size=(SIZE, SIZE, 3))
        source = square_landmarks(SIZE, margin=2.0, steps=4)
        jitter = generator.uniform(-1.0, 1.0, size=source.points.shape)
        target = LandmarkSet.of(source.points + jitter)
        constant = Tensor(np.full((SIZE, SIZE, 3), 0.2))

        # act
        synthesized = synthesize_spoof(live, target, constant, source)
        plain = synthesize_spoof(
            live, target, Tensor(np.zeros((SIZE, SIZE, 3))), source
        )

        # assert
        # target points stay within one pixel of the lattice, so [4, SIZE - 5]
        # is inside both hulls
        core = (slice(4, SIZE - 4), slice(4, SIZE - 4))
        expected = np.full((SIZE - 8, SIZE - 8, 3), 0.2)
        added = (synthesized.image.data - live)[core]
        np.testing.assert_allclose(expected, added, atol=1e-9)
        np.testing.assert_array_equal(live, plain.image.data)

    def test_harden_is_deterministic_per_seed(self):
        # arrange
        elements = _elements(rng(), batch=8)
        seed = int(rng().integers(0, 1000))

        # act
        first = harden(elements, np.random.default_rng(seed))
        second = harden(elements, np.random.default_rng(seed))

        # assert
        for a, b in zip(first.elements(), second.elements()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_hardening_picks_each_element_a_quarter_of_the_time(self):
        # act
        choices = draw_hardening(np.random.default_rng(2024), 4000)

        # assert
        frequencies = np.bincount(choices, minlength=len(ELEMENT_TAGS)) / 4000.0
        np.testing.assert_allclose(
            np.full(len(ELEMENT_TAGS), 0.25), frequencies, atol=0.02
        )

    def test_hardened_trace_is_never_stronger_than_the_original(self):
        # arrange
        generator = rng()
        image = generator.uniform(size=(8, SIZE, SIZE, 3))
        elements = TraceElements.of(
            *(np.abs(element.data) for element in _elements(generator, 8).elements())
        )
        original = np.linalg.norm(compose(elements, image).data.reshape(8, -1), axis=1)

        for seed in range(5):
            # act
            hardened = compose(harden(elements, np.random.default_rng(seed)), image)

            # assert
            norms = np.linalg.norm(hardened.data.reshape(8, -1), axis=1)
            self.assertTrue(np.all(norms <= original + 1e-12))
            self.assertTrue(np.any(norms < original))

    def test_trace_display_centers_zero_on_mid_gray(self):
        # act
        shown = trace_display(np.array([-1.5, -1.0, 0.0, 0.4, 1.0, 2.0]))

        # assert
        np.testing.assert_allclose(np.array([0.0, 0.0, 0.5, 0.7, 1.0, 1.0]), shown)
