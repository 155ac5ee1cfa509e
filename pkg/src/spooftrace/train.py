# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Train - The three-step training schedule run on every balanced minibatch:

1. generator step: disentangle live and spoof faces, reconstruct the live
   counterparts, plant hardened spoof traces onto the live faces and update
   the generator against frozen discriminators
2. discriminator step: update the three discriminators at half the learning
   rate on the (detached) outputs of step 1
3. supervision step: feed the live faces and the synthesized spoofs through
   the generator again and supervise the recovered trace with the planted
   one; the batchnorm moving averages are updated here

Training is deterministic: everything random is drawn from the generator
held by :py:class:`TrainState`, in a fixed order.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from spooftrace.errors import DimensionError, DomainError, TrainingAborted
from spooftrace.losses import (
    LossWeights,
    disc_adv_loss,
    esr_loss,
    gen_adv_loss,
    pixel_loss,
    regularizer_loss,
    total_generator_loss,
    total_supervision_loss,
)
from spooftrace.models import (
    BatchNormMode,
    ModelConfig,
    Networks,
    discriminator_forward,
    frozen,
    generator_forward,
    init_weights,
)
from spooftrace.optimizer import AdamState, gradients, optimizer_update
from spooftrace.tensor import Tensor, backward, concat, detach, zero_grad
from spooftrace.trace import compose, harden, synthesize_batch
from spooftrace.warp3d import LandmarkSet

LOGGER = logging.getLogger(__name__)

LOG_COLUMNS: Tuple[str, ...] = ("iter", "L_G", "L_ESR", "L_R", "L_D", "L_P", "total")

Update = Callable[[Sequence[Tensor], Sequence[np.ndarray], float, AdamState], AdamState]


class Variant(Enum):
    """
    Which parts of the method are trained
    """

    #: encoder and ESR only
    ESR = "esr"
    #: single-layer trace with adversarial training
    ESR_GAN = "esr_gan"
    #: disentangled trace with adversarial training
    ESR_DGAN = "esr_dgan"
    #: single-layer trace with adversarial training and supervision step
    ESR_GAN_PIXEL = "esr_gan_pixel"
    #: disentangled trace with adversarial training and supervision step
    FULL = "full"

    @property
    def adversarial(self) -> bool:
        return self is not Variant.ESR

    @property
    def supervised(self) -> bool:
        return self in (Variant.ESR_GAN_PIXEL, Variant.FULL)

    @property
    def single_layer(self) -> bool:
        return self in (Variant.ESR_GAN, Variant.ESR_GAN_PIXEL)


@dataclass(frozen=True)
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """
    Everything a training run depends on

    :raises DomainError: If the batch cannot be split evenly into live and
        spoof halves, or a schedule length is not positive
    """

    base_lr: float = 1e-4
    total_iters: int = 3000
    decay_every: int = 1000
    decay_ratio: float = 10.0
    batch_size: int = 8
    seed: int = 0
    image_size: int = 64
    checkpoint_every: int = 500
    log_every: int = 50
    variant: Variant = Variant.FULL
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise DomainError(
                f"batch_size must be even and >= 2, got {self.batch_size}"
            )
        for name in ("total_iters", "decay_every", "checkpoint_every", "log_every"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.image_size < 32 or self.image_size % 32:
            raise DomainError(
                f"image_size must be a positive multiple of 32, got {self.image_size}"
            )
        if not self.base_lr > 0 or not self.decay_ratio >= 1:
            raise DomainError("base_lr must be positive and decay_ratio at least 1")

    def model_config(self) -> ModelConfig:
        "The network configuration implied by the image size and the variant"
        return replace(
            self.model,
            image_size=self.image_size,
            single_layer_trace=self.variant.single_layer,
        )


@dataclass
class TrainState:
    """
    The complete state of a training run; see
    :py:mod:`spooftrace.checkpoint` for its serialization
    """

    networks: Networks
    g_moments: AdamState
    d_moments: AdamState
    rng: np.random.Generator
    iteration: int = 0
    seed: int = 0

    @staticmethod
    def initial(config: TrainConfig) -> TrainState:
        "Seeded weights, zero moments, iteration 0"
        rng = np.random.default_rng(config.seed)
        networks = init_weights(rng, config.model_config())

        return TrainState(
            networks,
            AdamState.of(networks.generator.parameters()),
            AdamState.of(networks.discriminator.parameters()),
            rng,
            seed=config.seed,
        )


@dataclass(frozen=True)
class FaceSet:
    """
    Images ``[n,N,N,3]`` of one domain with their landmarks
    """

    images: np.ndarray
    landmarks: Tuple[LandmarkSet, ...]

    @staticmethod
    def of(samples: Sequence) -> FaceSet:
        "From anything with ``image`` and ``landmarks`` attributes"
        if not samples:
            raise DomainError("a face set needs at least one sample")

        return FaceSet(
            np.stack(
                [np.asarray(sample.image, dtype=np.float64) for sample in samples]
            ),
            tuple(sample.landmarks for sample in samples),
        )

    @property
    def count(self) -> int:
        return int(self.images.shape[0])


@dataclass(frozen=True)
class Batch:
    """
    A balanced minibatch: ``live[k]`` is paired with ``spoof[k]`` when traces
    are transplanted

    :raises DimensionError: If the halves differ in shape or landmark count
    :raises DomainError: If a landmark lies outside its image
    """

    live: np.ndarray
    live_landmarks: Tuple[LandmarkSet, ...]
    spoof: np.ndarray
    spoof_landmarks: Tuple[LandmarkSet, ...]

    def __post_init__(self):
        if self.live.shape != self.spoof.shape or self.live.ndim != 4:
            raise DimensionError(
                f"unbalanced batch: {self.live.shape} vs {self.spoof.shape}"
            )
        half, size = self.live.shape[0], self.live.shape[1]
        if not len(self.live_landmarks) == len(self.spoof_landmarks) == half:
            raise DimensionError("one landmark set per image is required")
        for landmarks in self.live_landmarks + self.spoof_landmarks:
            if not landmarks.fits(size):
                raise DomainError(f"landmarks outside the {size}x{size} image")

    @property
    def half(self) -> int:
        return int(self.live.shape[0])


def sample_batch(
    rng: np.random.Generator, live: FaceSet, spoof: FaceSet, batch_size: int
) -> Batch:
    "Draw ``batch_size / 2`` live and as many spoof faces, with replacement"
    half = batch_size // 2
    live_index = rng.integers(0, live.count, size=half)
    spoof_index = rng.integers(0, spoof.count, size=half)

    return Batch(
        live.images[live_index],
        tuple(live.landmarks[i] for i in live_index),
        spoof.images[spoof_index],
        tuple(spoof.landmarks[i] for i in spoof_index),
    )


@dataclass(frozen=True)
class StepStats:  # pylint: disable=too-many-instance-attributes
    """
    Loss components of one training iteration. ``total`` adds up the three
    step objectives.
    """

    iteration: int
    l_g: float
    l_esr: float
    l_r: float
    l_d: float
    l_p: float
    total: float
    g_lr: float
    d_lr: float

    def row(self) -> List[str]:
        "The training log row, floats in round-trip precision"
        values = (self.l_g, self.l_esr, self.l_r, self.l_d, self.l_p, self.total)
        return [str(self.iteration)] + [repr(value) for value in values]


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """
    Step decay: ``base_lr / decay_ratio ** floor(iteration / decay_every)``

    :raises DomainError: On a negative iteration
    """
    if iteration < 0:
        raise DomainError(f"iteration must be >= 0, got {iteration}")

    return config.base_lr / config.decay_ratio ** (iteration // config.decay_every)


def _value(loss: Union[Tensor, float]) -> float:
    return loss.item() if isinstance(loss, Tensor) else float(loss)


def _check_finite(iteration: int, components: Dict[str, float]) -> None:
    if not all(math.isfinite(value) for value in components.values()):
        raise TrainingAborted(iteration, components)


def train_step(
    state: TrainState,
    batch: Batch,
    config: TrainConfig,
    update: Update = optimizer_update,
) -> Tuple[TrainState, StepStats]:
    """
    Run the generator, discriminator and supervision steps on one batch.
    The networks and moments in ``state`` are updated and the iteration
    counter advanced.

    :param update: The optimizer; receives parameters, gradients, learning
        rate and moments

    :raises TrainingAborted: If a step objective is non-finite
    """
    variant, weights = config.variant, config.weights
    generator = state.networks.generator
    discriminator = state.networks.discriminator
    g_params, d_params = generator.parameters(), discriminator.parameters()
    lr = lr_schedule(state.iteration, config)
    half = batch.half
    live, spoof = Tensor(batch.live), Tensor(batch.spoof)
    labels = [True] * half + [False] * half

    # without a supervision step the moving averages follow the generator step
    mode = BatchNormMode.BATCH if variant.supervised else BatchNormMode.UPDATE

    zero_grad(g_params)
    synth = recon = None
    with frozen(d_params):
        out = generator_forward(generator, concat([live, spoof], axis=0), mode)
        l_esr = esr_loss(out.spoof_map, labels)
        if variant.adversarial:
            traces_live = compose(out.elements.rows(0, half), live)
            spoof_elements = out.elements.rows(half, 2 * half)
            traces_spoof = compose(spoof_elements, spoof)
            recon = spoof - traces_spoof
            if not variant.single_layer:
                spoof_elements = harden(spoof_elements, state.rng)
            hardened = compose(spoof_elements, spoof)
            synth = synthesize_batch(
                live, batch.live_landmarks, hardened, batch.spoof_landmarks
            )
            l_g = gen_adv_loss(
                discriminator_forward(discriminator, recon),
                discriminator_forward(discriminator, synth.image),
            )
            l_r = regularizer_loss(traces_live, traces_spoof, weights.beta)
            generator_total = total_generator_loss(l_g, l_esr, l_r, weights)
        else:
            l_g, l_r = Tensor(0.0), Tensor(0.0)
            generator_total = weights.alpha2 * l_esr
        _check_finite(
            state.iteration,
            {"L_G": _value(l_g), "L_ESR": _value(l_esr), "L_R": _value(l_r)},
        )
        backward(generator_total)
    state.g_moments = update(g_params, gradients(g_params), lr, state.g_moments)

    l_d: Union[Tensor, float] = 0.0
    if synth is not None and recon is not None:
        zero_grad(d_params)
        with frozen(g_params):
            l_d = disc_adv_loss(
                discriminator_forward(discriminator, live),
                discriminator_forward(discriminator, spoof),
                discriminator_forward(discriminator, detach(recon)),
                discriminator_forward(discriminator, detach(synth.image)),
            )
            _check_finite(state.iteration, {"L_D": _value(l_d)})
            backward(l_d)
        state.d_moments = update(
            d_params, gradients(d_params), lr / 2.0, state.d_moments
        )

    l_p: Union[Tensor, float] = 0.0
    supervision_total: Union[Tensor, float] = 0.0
    if variant.supervised and synth is not None:
        zero_grad(g_params)
        synthesized = detach(synth.image)
        with frozen(d_params):
            out = generator_forward(
                generator, concat([live, synthesized], axis=0), BatchNormMode.UPDATE
            )
            recovered = compose(out.elements.rows(half, 2 * half), synthesized)
            l_p = pixel_loss(recovered, synth.warped_trace)
            supervision_total = total_supervision_loss(
                esr_loss(out.spoof_map, labels), l_p, weights
            )
            _check_finite(
                state.iteration,
                {"L_P": _value(l_p), "supervision": _value(supervision_total)},
            )
            backward(supervision_total)
        state.g_moments = update(g_params, gradients(g_params), lr, state.g_moments)

    stats = StepStats(
        iteration=state.iteration,
        l_g=_value(l_g),
        l_esr=_value(l_esr),
        l_r=_value(l_r),
        l_d=_value(l_d),
        l_p=_value(l_p),
        total=_value(generator_total) + _value(l_d) + _value(supervision_total),
        g_lr=lr,
        d_lr=lr / 2.0 if variant.adversarial else 0.0,
    )
    state.iteration += 1

    return state, stats


class TrainingLog:
    """
    The CSV training log ``iter,L_G,L_ESR,L_R,L_D,L_P,total``. Opening it for a
    resumed run drops the rows at and after the resume iteration.
    """

    def __init__(self, path: Path):
        self.path = path

    @staticmethod
    def open(path: Path, resume_from: int = 0) -> TrainingLog:
        kept: List[List[str]] = []
        if resume_from > 0 and path.exists():
            with path.open(newline="", encoding="utf-8") as handle:
                rows = list(csv.reader(handle))[1:]
            kept = [row for row in rows if row and int(row[0]) < resume_from]
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            writer.writerows(kept)

        return TrainingLog(path)

    def append(self, stats: StepStats) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle, lineterminator="\n").writerow(stats.row())


def fit(  # pylint: disable=too-many-arguments
    state: TrainState,
    live: FaceSet,
    spoof: FaceSet,
    config: TrainConfig,
    log: Optional[TrainingLog] = None,
    on_checkpoint: Optional[Callable[[TrainState], None]] = None,
    update: Update = optimizer_update,
) -> TrainState:
    """
    Train from ``state.iteration`` up to ``config.total_iters``. A state
    restored from a checkpoint continues exactly where the original run was
    when the checkpoint was taken.

    :param on_checkpoint: Called every ``checkpoint_every`` iterations and
        after the last one

    :raises TrainingAborted: If a step produces a non-finite loss
    """
    if state.iteration:
        LOGGER.info("Resuming at iteration %d", state.iteration)
    last: Optional[StepStats] = None
    while state.iteration < config.total_iters:
        batch = sample_batch(state.rng, live, spoof, config.batch_size)
        try:
            state, stats = train_step(state, batch, config, update)
        except TrainingAborted as error:
            LOGGER.error("%s; last finite step: %s", error, last)
            raise
        last = stats
        if log is not None:
            log.append(stats)
        if stats.iteration % config.log_every == 0:
            LOGGER.info(
                "iter %d lr %.3g L_G %.5g L_ESR %.5g L_R %.5g L_D %.5g L_P %.5g"
                " total %.5g",
                stats.iteration,
                stats.g_lr,
                stats.l_g,
                stats.l_esr,
                stats.l_r,
                stats.l_d,
                stats.l_p,
                stats.total,
            )
        done = state.iteration == config.total_iters
        checkpoint_due = state.iteration % config.checkpoint_every == 0 or done
        if on_checkpoint is not None and checkpoint_due:
            LOGGER.info("Checkpoint at iteration %d", state.iteration)
            on_checkpoint(state)

    return state
