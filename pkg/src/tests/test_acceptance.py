# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
"""
Long-running end-to-end experiments; run with ``SPOOFTRACE_ACCEPTANCE=1`` or
``nox -s acceptance``
"""
import logging
import unittest
from typing import Callable, List, Tuple

import numpy as np
import pytest  # pylint: disable=import-error

from spooftrace.evaluation import (
    Label,
    ScoreRecord,
    calibrate_alpha0,
    compare_media_classifiers,
    disentangle,
    roc_metrics,
    score,
    score_terms,
)
from spooftrace.losses import (
    disc_adv_loss,
    esr_loss,
    gen_adv_loss,
    pixel_loss,
    regularizer_loss,
)
from spooftrace.models import BatchNormMode, generator_forward, init_weights
from spooftrace.synthdata import DatasetConfig, Split, gen_dataset
from spooftrace.tensor import (
    Tensor,
    backward,
    batchnorm,
    conv2d,
    grad_check,
    leaky_relu,
    resize_bilinear,
    sum_,
    transpose_conv2d,
    zero_grad,
)
from spooftrace.trace import TraceElements, compose
from spooftrace.train import FaceSet, TrainConfig, TrainState, fit
from spooftrace.warp3d import (
    LandmarkSet,
    bilinear_sample,
    delaunay,
    sparse_to_dense,
    warp_trace,
)
from tests.fixtures import ACCEPTANCE, TINY_MODEL
from tests.test_evaluation import (
    _brute_force_eer,
    _brute_force_rates,
    _brute_force_tdr,
    _records,
)

LOGGER = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4

ELEMENT_SHAPES = ((1, 1, 1, 3), (1, 1, 1, 3), (1, 2, 2, 3), (1, 8, 8, 3))

SKIP_REASON = "set SPOOFTRACE_ACCEPTANCE=1 to run the acceptance experiments"


def _gradient_checks(generator: np.random.Generator) -> List[Callable[[], float]]:
    "One finite-difference check per differentiable operation, drawn from ``generator``"
    x = generator.normal(size=(2, 6, 6, 3))
    kernel = Tensor(generator.normal(size=(3, 3, 3, 4)))
    up_kernel = Tensor(generator.normal(size=(3, 3, 2, 3)))
    weights = generator.normal(size=(2, 6, 6, 4))
    up_weights = generator.normal(size=(2, 12, 12, 2))
    resize_weights = generator.normal(size=(2, 12, 12, 3))
    gamma = Tensor(generator.uniform(0.5, 1.5, size=3))
    beta = Tensor(generator.normal(size=3))
    image = generator.normal(size=(8, 8, 3))
    coords = generator.uniform(0.0, 7.0, size=(8, 8, 2))
    landmarks = LandmarkSet.of(generator.uniform(0.0, 7.0, size=(6, 2)))
    shifted = landmarks.points + generator.uniform(-1.0, 1.0, size=(6, 2))
    moved = LandmarkSet.of(np.clip(shifted, 0.0, 7.0))
    elements = [generator.normal(size=shape) for shape in ELEMENT_SHAPES]
    maps = [Tensor(generator.normal(size=(2, side, side, 2))) for side in (4, 2, 1)]

    def _element_check(tag: int) -> float:
        def _compose(t: Tensor) -> Tensor:
            parts = [Tensor(element) for element in elements]
            parts[tag] = t
            trace = compose(TraceElements(*parts), image)
            return sum_(trace * resize_weights[:1, :8, :8])

        return grad_check(_compose, elements[tag])

    return [
        lambda: grad_check(lambda t: sum_(conv2d(t, kernel) * weights), x),
        lambda: grad_check(
            lambda k: sum_(conv2d(Tensor(x), k) * weights), kernel.data
        ),
        lambda: grad_check(
            lambda t: sum_(transpose_conv2d(t, up_kernel) * up_weights), x
        ),
        lambda: grad_check(
            lambda t: sum_(batchnorm(t, gamma, beta, training=True) * x),
            x * 2.0 + 1.0,
        ),
        lambda: grad_check(lambda t: sum_(leaky_relu(t) * x), x),
        lambda: grad_check(
            lambda t: sum_(resize_bilinear(t, 12, 12) * resize_weights), x
        ),
        lambda: grad_check(lambda t: sum_(bilinear_sample(t, coords) * image), image),
        lambda: grad_check(
            lambda t: sum_(warp_trace(t, moved, landmarks) * image), image
        ),
        lambda: _element_check(0),
        lambda: _element_check(1),
        lambda: _element_check(2),
        lambda: _element_check(3),
        lambda: grad_check(
            lambda t: esr_loss(t, [True, False]),
            generator.uniform(0.1, 0.9, size=(2, 2, 2)),
        ),
        lambda: grad_check(lambda t: gen_adv_loss([t] + maps[1:], maps), maps[0].data),
        lambda: grad_check(
            lambda t: disc_adv_loss(maps, maps, [t] + maps[1:], maps), maps[0].data
        ),
        lambda: grad_check(lambda t: regularizer_loss(t[:1], t[1:], 10.0), x),
        lambda: grad_check(
            lambda t: pixel_loss(t, Tensor(x)),
            x + generator.uniform(0.1, 1.0, size=x.shape),
        ),
    ]


def _brute_force_field(
    anchors: np.ndarray, triangles: np.ndarray, offsets: np.ndarray, size: int
) -> np.ndarray:
    """
    Solve the barycentric system of every triangle for every pixel at once;
    first hit wins
    """
    systems = np.stack(
        [np.vstack([anchors[corners].T, np.ones(3)]) for corners in triangles]
    )
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    pixels = np.stack([xs.ravel(), ys.ravel(), np.ones(size * size)])
    weights = np.linalg.inv(systems) @ pixels
    inside = np.all(weights >= -1e-12, axis=1)
    first = np.argmax(inside, axis=0)
    hit = inside.any(axis=0)
    columns = np.arange(size * size)
    chosen = weights[first, :, columns]
    field = np.einsum("pk,pkd->pd", chosen, offsets[triangles[first]])
    field[~hit] = 0.0

    return field.reshape(size, size, 2)


@pytest.mark.acceptance
@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class TestAcceptance(unittest.TestCase):
    def test_gradient_suite_over_twenty_seeds(self):
        for seed in range(20):
            # arrange
            checks = _gradient_checks(np.random.default_rng(seed))

            # act
            errors = [check() for check in checks]

            # assert
            self.assertLess(max(errors), GRADIENT_TOLERANCE, f"seed {seed}: {errors}")

    def test_generator_gradient_on_sampled_parameters(self):
        # arrange
        generator = np.random.default_rng(5)
        networks = init_weights(generator, TINY_MODEL)
        images = generator.uniform(size=(2, 32, 32, 3))
        params = networks.generator.parameters()
        spoof_map = generator_forward(
            networks.generator, Tensor(images), BatchNormMode.BATCH
        ).spoof_map
        map_weights = generator.normal(size=spoof_map.shape)
        trace_weights = generator.normal(size=images.shape)

        def _objective() -> Tensor:
            out = generator_forward(
                networks.generator, Tensor(images), BatchNormMode.BATCH
            )
            trace = compose(out.elements, images)
            return sum_(out.spoof_map * map_weights) + sum_(trace * trace_weights)

        def _numeric(param: Tensor, index: Tuple[int, ...]) -> float:
            # one-sided differences disagree when a leaky ReLU kink lies in range
            original = param.data[index]
            for eps in (1e-6, 1e-7, 1e-8):
                values = []
                for shift in (eps, 0.0, -eps):
                    param.data[index] = original + shift
                    values.append(_objective().item())
                param.data[index] = original
                ahead = (values[0] - values[1]) / eps
                behind = (values[1] - values[2]) / eps
                if abs(ahead - behind) <= 1e-4 * max(1.0, abs(ahead)):
                    break

            return (values[0] - values[2]) / (2.0 * eps)

        zero_grad(params)
        backward(_objective())
        errors = []

        for _ in range(100):
            # act
            param = params[int(generator.integers(len(params)))]
            index = tuple(int(generator.integers(dim)) for dim in param.shape)
            numeric = _numeric(param, index)
            errors.append(abs(param.grad[index] - numeric) / max(1.0, abs(numeric)))

        # assert
        self.assertLess(max(errors), 1e-3)

    def test_warping_matches_brute_force_interpolation(self):
        # arrange
        generator = np.random.default_rng(17)
        size = 32

        for case in range(100):
            count = (4, 10, 140)[case % 3]
            anchors = LandmarkSet.of(
                generator.uniform(0.5, size - 1.5, size=(count, 2))
            )
            offsets = generator.normal(0.0, 2.0, size=(count, 2))

            # act
            dense = sparse_to_dense(anchors, offsets, size)

            # assert
            triangles = delaunay(anchors).triangles
            expected = _brute_force_field(anchors.points, triangles, offsets, size)
            np.testing.assert_allclose(expected, dense.field, atol=1e-9)

    def test_metrics_match_a_brute_force_sweep(self):
        # arrange
        generator = np.random.default_rng(23)

        for _ in range(50):
            counts = generator.integers(5, 60, size=2)
            live = np.round(generator.normal(0.0, 1.0, size=int(counts[0])), 2)
            spoof = np.round(generator.normal(1.0, 1.0, size=int(counts[1])), 2)

            # act
            report = roc_metrics(_records(live.tolist(), spoof.tolist()))

            # assert
            apcer, bpcer = _brute_force_rates(live, spoof, report.threshold)
            eer, tdr = _brute_force_eer(live, spoof), _brute_force_tdr(live, spoof)
            self.assertAlmostEqual(eer, report.eer, delta=1e-12)
            self.assertAlmostEqual(apcer, report.apcer, delta=1e-12)
            self.assertAlmostEqual(bpcer, report.bpcer, delta=1e-12)
            self.assertAlmostEqual(tdr, report.tdr_at_fdr, delta=1e-12)
            self.assertEqual((report.apcer + report.bpcer) / 2.0, report.acer)


@pytest.mark.acceptance
@unittest.skipUnless(ACCEPTANCE, SKIP_REASON)
class TestPlantedTraceRecovery(unittest.TestCase):
    """
    The desk-scale experiment: 200 live and 200 spoof faces at 64 pixels, 3000
    iterations with batches of 8
    """

    @classmethod
    def setUpClass(cls):
        cls.dataset = gen_dataset(DatasetConfig())
        cls.config = TrainConfig()
        cls.initial = TrainState.initial(cls.config).networks
        live = FaceSet.of(cls.dataset.live(Split.TRAIN))
        spoof = FaceSet.of(cls.dataset.spoof(Split.TRAIN))
        trained = fit(TrainState.initial(cls.config), live, spoof, cls.config)
        cls.networks = trained.networks

    def _terms(self, which: Split):
        samples = self.dataset.split(which)
        images = np.stack([sample.image for sample in samples])
        maps, traces = disentangle(self.networks, images)
        labels = [Label.LIVE if sample.is_live else Label.SPOOF for sample in samples]

        return samples, score_terms(maps, traces, labels)

    def test_held_out_error_rate(self):
        # arrange
        _, validation = self._terms(Split.TRAIN)
        samples, terms = self._terms(Split.TEST)

        # act
        alpha0 = calibrate_alpha0(validation)
        report = roc_metrics(
            [
                ScoreRecord(
                    term.score(alpha0), term.label, sample.medium, sample.sample_id
                )
                for term, sample in zip(terms, samples)
            ]
        )

        # assert
        LOGGER.info("held-out EER %.4f at alpha0 %.4g", report.eer, alpha0)
        self.assertLessEqual(report.eer, 0.05)

    def test_recovered_traces_approach_the_planted_ones(self):
        # arrange
        samples = self.dataset.spoof(Split.TEST)
        images = np.stack([sample.image for sample in samples])
        planted = np.stack(
            [compose(sample.planted, sample.base).data[0] for sample in samples]
        )

        # act
        _, trained = disentangle(self.networks, images)
        _, untrained = disentangle(self.initial, images)

        # assert
        trained_error = float(np.abs(trained - planted).mean())
        initial_error = float(np.abs(untrained - planted).mean())
        LOGGER.info(
            "trace L1 %.4f, at initialization %.4f", trained_error, initial_error
        )
        self.assertLessEqual(trained_error, 0.5 * initial_error)

    def test_traces_tell_media_apart(self):
        # arrange
        samples = self.dataset.spoof(Split.TRAIN) + self.dataset.spoof(Split.TEST)
        images = np.stack([sample.image for sample in samples])
        media = [sample.medium.from_maybe("") for sample in samples]
        _, traces = disentangle(self.networks, images)

        # act
        on_traces, on_images = compare_media_classifiers(traces, images, media)

        # assert
        LOGGER.info(
            "medium accuracy %.4f on traces, %.4f on raw images",
            on_traces.accuracy,
            on_images.accuracy,
        )
        self.assertGreaterEqual(on_traces.accuracy, 0.85)
        self.assertGreaterEqual(on_traces.accuracy, on_images.accuracy - 0.05)

    def test_scores_are_bit_identical_across_runs(self):
        # arrange
        images = np.stack([sample.image for sample in self.dataset.split(Split.TEST)])

        # act
        first = disentangle(self.networks, images)
        second = disentangle(self.networks, images)

        # assert
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])
        self.assertEqual(0.5, score(np.ones((4, 4)), np.zeros((64, 64, 3)), 1.0))
