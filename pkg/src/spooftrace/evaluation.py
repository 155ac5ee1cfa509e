# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Evaluation - Liveness scores, calibration of the trace weight ``alpha0``,
biometric error rates and spoof medium classification on disentangled
traces.

Scores grow with spoofness: a face is predicted spoof when its score is at
least the decision threshold. APCER is the share of spoof faces accepted as
live, BPCER the share of live faces rejected as spoof.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pyella.maybe import Maybe, nothing

from spooftrace.errors import DimensionError, DomainError
from spooftrace.models import BatchNormMode, LayerFactory, Networks, generator_forward
from spooftrace.optimizer import AdamState, gradients, optimizer_update
from spooftrace.tensor import (
    Tensor,
    TensorLike,
    as_tensor,
    backward,
    log_softmax,
    mean,
    resize_bilinear,
    sum_,
    zero_grad,
)
from spooftrace.trace import compose, trace_display

LOGGER = logging.getLogger(__name__)

FDR_TARGET = 0.005
ALPHA0_GRID: Tuple[float, ...] = tuple(
    float(alpha) for alpha in np.logspace(-3.0, 1.0, 13)
)


class Label(Enum):
    LIVE = "live"
    SPOOF = "spoof"


@dataclass(frozen=True)
class ScoreRecord:
    """
    The score of one face with its ground truth

    :raises DomainError: If the score is not finite
    """

    score: float
    label: Label
    medium: Maybe[str] = field(default_factory=lambda: nothing)
    sample_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise DomainError(f"score of {self.sample_id or 'record'} is not finite")


@dataclass(frozen=True)
class MetricsReport:
    """
    Error rates at the decision threshold (the EER threshold unless one was
    given) and the true detection rate at the fixed false detection rate
    """

    eer: float
    threshold: float
    apcer: float
    bpcer: float
    tdr_at_fdr: float
    fdr_target: float = FDR_TARGET

    @property
    def acer(self) -> float:
        return (self.apcer + self.bpcer) / 2.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "eer": self.eer,
            "threshold": self.threshold,
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "tdr_at_fdr": self.tdr_at_fdr,
            "fdr_target": self.fdr_target,
        }


@dataclass(frozen=True)
class ScoreTerms:
    """
    The two halves of the score before weighting: ``mean|M|`` and the mean
    absolute trace intensity over ``N x N x 3``
    """

    esr: float
    trace: float
    label: Label

    def score(self, alpha0: float) -> float:
        return 0.5 * self.esr + 0.5 * alpha0 * self.trace


def score(spoof_map: TensorLike, trace_img: TensorLike, alpha0: float) -> float:
    """
    ``||M||_1 / (2 K^2) + alpha0 * ||G(I)||_1 / (2 N^2 3)``

    :raises DimensionError: If ``M`` is not ``K x K`` or the trace not ``N x N x 3``
    """
    esr = np.asarray(as_tensor(spoof_map).data)
    trace = np.asarray(as_tensor(trace_img).data)
    if esr.ndim != 2 or trace.ndim != 3 or trace.shape[2] != 3:
        raise DimensionError(f"cannot score M {esr.shape} with trace {trace.shape}")

    return 0.5 * float(np.abs(esr).mean()) + 0.5 * alpha0 * float(np.abs(trace).mean())


def disentangle(
    networks: Networks, images: np.ndarray, chunk: int = 16
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run the generator in inference mode over ``images[n,N,N,3]``

    :return: The spoofness maps ``[n,K,K]`` and composed traces ``[n,N,N,3]``
    """
    maps, traces = [], []
    for start in range(0, images.shape[0], chunk):
        batch = Tensor(images[start : start + chunk])
        out = generator_forward(networks.generator, batch, BatchNormMode.INFERENCE)
        maps.append(out.spoof_map.numpy())
        traces.append(compose(out.elements, batch).numpy())

    return np.concatenate(maps), np.concatenate(traces)


def score_terms(
    spoof_maps: np.ndarray, traces: np.ndarray, labels: Sequence[Label]
) -> List[ScoreTerms]:
    return [
        ScoreTerms(float(np.abs(m).mean()), float(np.abs(t).mean()), label)
        for m, t, label in zip(spoof_maps, traces, labels)
    ]


def _split(scores: np.ndarray, is_live: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    live, spoof = scores[is_live], scores[~is_live]
    if live.size == 0 or spoof.size == 0:
        raise DomainError("metrics need both live and spoof records")

    return live, spoof


def _operating_points(live: np.ndarray, spoof: np.ndarray):
    scores = np.concatenate([live, spoof])
    candidates = np.unique(scores)
    candidates = np.append(candidates, np.nextafter(candidates[-1], np.inf))
    live_sorted, spoof_sorted = np.sort(live), np.sort(spoof)
    apcer = np.searchsorted(spoof_sorted, candidates, side="left") / spoof.size
    live_below = np.searchsorted(live_sorted, candidates, side="left")
    bpcer = (live.size - live_below) / live.size

    return candidates, apcer, bpcer


def _equal_error(candidates, apcer, bpcer) -> Tuple[float, float]:
    gap = apcer - bpcer
    index = int(np.argmax(gap >= 0.0))
    if gap[index] == 0.0 or index == 0:
        return float(apcer[index]), float(candidates[index])
    fraction = -gap[index - 1] / (gap[index] - gap[index - 1])
    eer = apcer[index - 1] + fraction * (apcer[index] - apcer[index - 1])
    low, high = candidates[index - 1], candidates[index]
    threshold = low + fraction * (high - low)

    return float(eer), float(threshold)


def equal_error_rate(scores: np.ndarray, is_live: np.ndarray) -> float:
    """
    :raises DomainError: If a class is missing
    """
    return _equal_error(*_operating_points(*_split(scores, is_live)))[0]


def roc_metrics(
    records: Sequence[ScoreRecord], fixed_threshold: Optional[float] = None
) -> MetricsReport:
    """
    Sweep every distinct score as threshold. The EER is interpolated linearly
    between the last operating point with APCER < BPCER and the first with
    APCER >= BPCER; APCER and BPCER are evaluated at ``fixed_threshold`` or,
    without one, at the EER threshold. TDR is the best detection rate among
    operating points whose FDR does not exceed 0.5%.

    :raises DomainError: If a class is missing
    """
    scores = np.array([record.score for record in records], dtype=np.float64)
    is_live = np.array([record.label is Label.LIVE for record in records], dtype=bool)
    live, spoof = _split(scores, is_live)
    candidates, apcer, bpcer = _operating_points(live, spoof)
    eer, eer_threshold = _equal_error(candidates, apcer, bpcer)

    threshold = eer_threshold if fixed_threshold is None else float(fixed_threshold)
    allowed = bpcer <= FDR_TARGET

    return MetricsReport(
        eer=eer,
        threshold=threshold,
        apcer=float(np.mean(spoof < threshold)),
        bpcer=float(np.mean(live >= threshold)),
        tdr_at_fdr=float(np.max(1.0 - apcer[allowed])),
    )


def calibration_sweep(
    terms: Sequence[ScoreTerms], grid: Sequence[float] = ALPHA0_GRID
) -> List[Tuple[float, float]]:
    """
    The validation EER reached by every ``alpha0`` in ``grid``

    :raises DomainError: If the validation set holds a single class
    """
    is_live = np.array([term.label is Label.LIVE for term in terms], dtype=bool)
    esr = np.array([term.esr for term in terms])
    trace = np.array([term.trace for term in terms])

    return [
        (alpha0, equal_error_rate(0.5 * esr + 0.5 * alpha0 * trace, is_live))
        for alpha0 in grid
    ]


def calibrate_alpha0(
    terms: Sequence[ScoreTerms], grid: Sequence[float] = ALPHA0_GRID
) -> float:
    """
    The ``alpha0`` of ``grid`` with the lowest validation EER; the smallest
    one on ties

    :raises DomainError: If the validation set holds a single class
    """
    best_alpha, best_eer = None, np.inf
    for alpha0, eer in calibration_sweep(terms, sorted(grid)):
        if eer < best_eer:
            best_alpha, best_eer = alpha0, eer
    LOGGER.debug("Calibrated alpha0=%s (EER %.4f)", best_alpha, best_eer)

    return float(best_alpha)  # type: ignore[arg-type]


@dataclass(frozen=True)
class ClassifierConfig:
    widths: Tuple[int, int, int] = (8, 16, 32)
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    test_fraction: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class MediumReport:
    accuracy: float
    media: Tuple[str, ...]
    train_size: int
    test_size: int


def stratified_split(
    media: Sequence[str], test_fraction: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per medium, hold out ``round(count * test_fraction)`` samples (at least
    one)

    :raises DomainError: If a medium cannot contribute to both sides
    """
    train, test = [], []
    tags = np.asarray(media)
    for medium in sorted(set(media)):
        members = rng.permutation(np.nonzero(tags == medium)[0])
        held_out = max(1, int(round(members.size * test_fraction)))
        if held_out >= members.size:
            raise DomainError(f"medium {medium!r} has too few samples to split")
        test.extend(members[:held_out])
        train.extend(members[held_out:])

    return np.sort(np.array(train)), np.sort(np.array(test))


class MediumClassifier:
    """
    Three stride-2 conv blocks, global average pooling and a linear head
    """

    def __init__(
        self, rng: np.random.Generator, classes: int, widths: Tuple[int, int, int]
    ):
        make = LayerFactory(rng, 3)
        channels = (3,) + tuple(widths)
        self.blocks = [
            make(c_in, c_out, stride=2, normalize=False)
            for c_in, c_out in zip(channels, channels[1:])
        ]
        self.weight = Tensor(
            rng.normal(0.0, 0.02, size=(widths[-1], classes)), requires_grad=True
        )
        self.bias = Tensor(np.zeros(classes), requires_grad=True)

    def parameters(self) -> List[Tensor]:
        convolutions = [p for block in self.blocks for p in block.parameters()]
        return convolutions + [self.weight, self.bias]

    def __call__(self, images: Tensor) -> Tensor:
        hidden = images
        for block in self.blocks:
            hidden = block(hidden, BatchNormMode.INFERENCE)
        pooled = mean(hidden, axis=(1, 2))

        return log_softmax(pooled @ self.weight + self.bias, axis=-1)


def medium_classify(
    inputs: np.ndarray,
    media: Sequence[str],
    config: ClassifierConfig = ClassifierConfig(),
) -> MediumReport:
    """
    Train a small classifier to tell spoof media apart from ``inputs``
    (composed traces, or raw images for the baseline) and measure its
    held-out accuracy. The caller keeps the generator fixed.

    :raises DomainError: With fewer than 2 media or a degenerate split
    :raises DimensionError: If there is not one medium per input
    """
    if inputs.ndim != 4 or inputs.shape[0] != len(media):
        raise DimensionError(f"{inputs.shape} inputs for {len(media)} media")
    names = tuple(sorted(set(media)))
    if len(names) < 2:
        raise DomainError("medium classification needs at least 2 media")
    rng = np.random.default_rng(config.seed)
    train, test = stratified_split(media, config.test_fraction, rng)
    targets = np.array([names.index(medium) for medium in media])
    onehot = np.eye(len(names))[targets]

    model = MediumClassifier(rng, len(names), config.widths)
    params = model.parameters()
    moments = AdamState.of(params)
    for _ in range(config.epochs):
        order = rng.permutation(train)
        for start in range(0, order.size, config.batch_size):
            picked = order[start : start + config.batch_size]
            zero_grad(params)
            log_probs = model(Tensor(inputs[picked]))
            loss = -sum_(log_probs * onehot[picked]) / float(picked.size)
            backward(loss)
            moments = optimizer_update(params, gradients(params), config.lr, moments)

    predicted = np.argmax(model(Tensor(inputs[test])).data, axis=-1)
    accuracy = float(np.mean(predicted == targets[test]))
    LOGGER.info("Medium accuracy %.3f over %d held-out samples", accuracy, test.size)

    return MediumReport(accuracy, names, int(train.size), int(test.size))


def compare_media_classifiers(
    traces: np.ndarray,
    images: np.ndarray,
    media: Sequence[str],
    config: ClassifierConfig = ClassifierConfig(),
) -> Tuple[MediumReport, MediumReport]:
    """
    The same classifier, split and seed on disentangled traces and on the
    raw spoof images

    :return: ``(traces report, raw images report)``
    """
    return (
        medium_classify(traces, media, config), medium_classify(images, media, config)
    )


PANEL_NAMES: Tuple[str, ...] = ("s", "b", "C", "T", "trace", "live")


def disentanglement_panels(
    networks: Networks, image: np.ndarray
) -> List[Tuple[str, np.ndarray]]:
    """
    The six views of one disentangled face: the color gain ``s*I``, the
    offset ``b``, the upsampled content ``C``, the texture ``T``, the composed
    trace and the reconstructed live face. Trace views go through
    :py:func:`trace_display <spooftrace.trace.trace_display>`; the live face
    is clamped to ``[0, 1]``.
    """
    batch = Tensor(np.asarray(image, dtype=np.float64)[None])
    size = batch.shape[1]
    elements = generator_forward(
        networks.generator, batch, BatchNormMode.INFERENCE
    ).elements
    trace = compose(elements, batch).data[0]
    views = [
        elements.s_color.data[0] * batch.data[0],
        np.broadcast_to(elements.b.data[0], (size, size, 3)),
        resize_bilinear(elements.C, size, size).data[0],
        elements.T.data[0],
        trace,
    ]
    panels = [trace_display(view) for view in views]
    panels.append(np.clip(batch.data[0] - trace, 0.0, 1.0))

    return list(zip(PANEL_NAMES, panels))
