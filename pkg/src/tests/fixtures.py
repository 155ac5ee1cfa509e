# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
import os
from random import randint
from typing import Optional, Tuple

import numpy as np

from spooftrace.models import ModelConfig
from spooftrace.synthdata import MEDIA, gen_live, gen_spoof
from spooftrace.train import FaceSet, TrainConfig, Variant
from spooftrace.warp3d import LandmarkSet

ACCEPTANCE = os.environ.get("SPOOFTRACE_ACCEPTANCE") == "1"

# the smallest networks the architecture allows, for fast tests
TINY_MODEL = ModelConfig(
    image_size=32,
    encoder_widths=(4, 4, 4),
    decoder_widths=(4, 4, 4),
    esr_width=4,
    discriminator_widths=(2, 2, 2),
)


def random_seed(floor: int = 0, ceil: int = 2**20) -> int:
    # B311 Standard pseudo-random generators are not suitable for security
    return randint(floor, ceil)  # nosec


def rng(seed: Optional[int] = None) -> np.random.Generator:
    return np.random.default_rng(random_seed() if seed is None else seed)


def tiny_config(**overrides) -> TrainConfig:
    values = dict(
        base_lr=1e-3,
        total_iters=4,
        decay_every=2,
        batch_size=2,
        seed=7,
        image_size=32,
        checkpoint_every=2,
        log_every=1,
        variant=Variant.FULL,
        model=TINY_MODEL,
    )
    values.update(overrides)

    return TrainConfig(**values)


def square_landmarks(size: int, margin: float = 2.0, steps: int = 4) -> LandmarkSet:
    "A regular ``steps x steps`` lattice covering the image"
    axis = np.linspace(margin, size - 1 - margin, steps)
    xs, ys = np.meshgrid(axis, axis)

    return LandmarkSet.of(np.stack([xs.ravel(), ys.ravel()], axis=-1))


def tiny_faces(count: int = 3, size: int = 32) -> Tuple[FaceSet, FaceSet]:
    "Live and spoof face sets drawn from the synthetic generator"
    live = FaceSet.of([gen_live(seed, size) for seed in range(count)])
    spoof = FaceSet.of(
        [gen_spoof(100 + seed, MEDIA[seed % len(MEDIA)], size) for seed in range(count)]
    )

    return live, spoof
