# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Synthdata - A procedural dataset of smooth "faces" with landmarks and of
spoof faces made by adding a known trace to such a face.

Spoof images are ``base + compose(planted, base)`` exactly, so every spoof
sample carries the ground truth of its own trace. Three spoof media are
available, each dominated by a different trace element:

- ``colorshift``: color gain ``s`` and offset ``b``
- ``moire``: high-frequency stripes in the texture ``T``
- ``maskedge``: a sharp contour in ``T`` plus a smooth content blob ``C``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pyella.maybe import Maybe, nothing

from spooftrace.errors import DimensionError, DomainError
from spooftrace.tensor import Tensor, resize_bilinear
from spooftrace.trace import CONTENT_RATIO, TraceElements, compose
from spooftrace.warp3d import LANDMARK_COUNT, LandmarkSet

LOGGER = logging.getLogger(__name__)

MEDIA: Tuple[str, ...] = ("colorshift", "moire", "maskedge")
TRACE_BOUND = 0.3
RINGS = 10
RING_POINTS = LANDMARK_COUNT // RINGS
SEED_SPACE = 2**31 - 1


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SyntheticSample:  # pylint: disable=too-many-instance-attributes
    """
    One generated face. Spoof samples keep the live ``base`` they were built
    on and the ``planted`` trace elements.
    """

    sample_id: str
    image: np.ndarray
    landmarks: LandmarkSet
    is_live: bool
    seed: int
    planted: Optional[TraceElements] = None
    base: Optional[np.ndarray] = None
    medium: Maybe[str] = field(default_factory=lambda: nothing)
    split: Split = Split.TRAIN

    @property
    def label(self) -> str:
        return "live" if self.is_live else "spoof"


@dataclass(frozen=True)
class DatasetConfig:
    """
    :raises DomainError: If a count is not positive or a medium is unknown
    :raises DimensionError: If the image size is not a multiple of 16
    """

    n_live: int = 200
    n_spoof: int = 200
    media: Tuple[str, ...] = MEDIA
    seed: int = 0
    image_size: int = 64
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.n_live < 1 or self.n_spoof < 1:
            raise DomainError("a dataset needs at least one live and one spoof sample")
        unknown = set(self.media) - set(MEDIA)
        if not self.media or unknown:
            raise DomainError(f"unknown media: {sorted(unknown)}")
        _check_size(self.image_size)
        if not 0.0 <= self.test_fraction < 1.0:
            raise DomainError(
                f"test_fraction must lie in [0, 1), got {self.test_fraction}"
            )


@dataclass(frozen=True)
class SyntheticDataset:
    samples: Tuple[SyntheticSample, ...]
    config: DatasetConfig

    def split(self, which: Split) -> List[SyntheticSample]:
        return [sample for sample in self.samples if sample.split is which]

    def live(self, which: Split) -> List[SyntheticSample]:
        return [sample for sample in self.split(which) if sample.is_live]

    def spoof(self, which: Split) -> List[SyntheticSample]:
        return [sample for sample in self.split(which) if not sample.is_live]


def _check_size(size: int) -> None:
    if size < 16 or size % 16:
        raise DimensionError(
            f"image size must be a positive multiple of 16, got {size}"
        )


def _smooth(
    rng: np.random.Generator, cells: int, size: int, channels: int
) -> np.ndarray:
    coarse = Tensor(rng.uniform(-1.0, 1.0, size=(1, cells, cells, channels)))

    return resize_bilinear(coarse, size, size).data[0]


def _live_image(rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    image = 0.5 * _smooth(rng, 3, size, 3)
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0, size, size=2)
        sigma = rng.uniform(size / 8.0, size / 3.0)
        color = rng.uniform(-1.0, 1.0, size=3)
        blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
        image += blob[..., None] * color
    low, high = image.min(), image.max()
    if high - low < 1e-12:
        return np.full_like(image, 0.5)

    return 0.1 + 0.8 * (image - low) / (high - low)


def canonical_landmarks(size: int) -> np.ndarray:
    """
    The face-shaped lattice: 10 concentric ellipses of 14 points around the
    image center, every other ring rotated by half a step
    """
    points = []
    for ring in range(RINGS):
        fraction = (ring + 1) / RINGS
        offset = (ring % 2) * np.pi / RING_POINTS
        angles = offset + 2.0 * np.pi * np.arange(RING_POINTS) / RING_POINTS
        radii = np.array([0.24, 0.3]) * size * fraction
        points.append(radii * np.stack([np.cos(angles), np.sin(angles)], axis=-1))

    return np.concatenate(points) + (size - 1) / 2.0


def _landmarks(rng: np.random.Generator, size: int) -> LandmarkSet:
    center = (size - 1) / 2.0
    points = canonical_landmarks(size) - center
    points = points + rng.uniform(-0.01 * size, 0.01 * size, size=points.shape)
    angle = np.deg2rad(rng.uniform(-15.0, 15.0))
    scale = rng.uniform(0.8, 1.2)
    cos, sin = np.cos(angle), np.sin(angle)
    rotation = scale * np.array([[cos, -sin], [sin, cos]])
    shift = rng.uniform(-size / 10.0, size / 10.0, size=2)

    return LandmarkSet.of(
        np.clip(points @ rotation.T + center + shift, 0.0, size - 1.0)
    )


def gen_live(seed: int, size: int) -> SyntheticSample:
    """
    A smooth live face: 3 to 6 Gaussian color blobs on a low-frequency
    background, rescaled to ``[0.1, 0.9]``, with the canonical landmarks under
    a random rotation (up to 15 degrees), scale (0.8 to 1.2) and translation
    (up to ``N/10``)

    :raises DimensionError: If ``size`` is not a multiple of 16
    """
    _check_size(size)
    rng = np.random.default_rng(seed)
    image = _live_image(rng, size)

    return SyntheticSample(f"live-{seed}", image, _landmarks(rng, size), True, seed)


def _small(rng: np.random.Generator, shape, amplitude: float) -> np.ndarray:
    return rng.uniform(-amplitude, amplitude, size=shape)


def _signed(rng: np.random.Generator, low: float, high: float, shape) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, size=shape)


def _stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    angle = rng.uniform(0.0, np.pi)
    frequency = rng.uniform(0.3, 0.42)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    along = xs * np.cos(angle) + ys * np.sin(angle)
    wave = np.sin(2.0 * np.pi * frequency * along + phase)

    return wave[..., None] * rng.uniform(0.1, 0.25, size=3)


def _contour(rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = rng.uniform(0.35 * size, 0.65 * size, size=2)
    ax, ay = rng.uniform(0.2 * size, 0.35 * size, size=2)
    radius = np.sqrt(((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2)
    band = np.abs(radius - 1.0) * min(ax, ay) < 1.5

    return band[..., None] * _signed(rng, 0.15, 0.3, 3)


def _content_blob(rng: np.random.Generator, content: int) -> np.ndarray:
    ys, xs = np.mgrid[0:content, 0:content].astype(np.float64)
    cx, cy = rng.uniform(0.25 * content, 0.75 * content, size=2)
    sigma = rng.uniform(content / 6.0, content / 3.0)
    blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))

    return blob[..., None] * _signed(rng, 0.1, 0.2, 3)


def gen_trace(seed: int, medium: str, size: int = 64) -> TraceElements:
    """
    Draw the trace elements of one spoof (batch of 1); every value lies in
    ``[-0.3, 0.3]``

    :raises DomainError: If ``medium`` is unknown
    """
    if medium not in MEDIA:
        raise DomainError(f"unknown medium {medium!r}, expected one of {MEDIA}")
    _check_size(size)
    rng = np.random.default_rng(seed)
    content = size // CONTENT_RATIO

    if medium == "colorshift":
        s_color = _signed(rng, 0.1, 0.3, (1, 1, 3))
        b = _signed(rng, 0.05, 0.2, (1, 1, 3))
        C = 0.02 * _smooth(rng, 2, content, 3)  # pylint: disable=invalid-name
        T = _small(rng, (size, size, 3), 0.005)  # pylint: disable=invalid-name
    elif medium == "moire":
        s_color = _small(rng, (1, 1, 3), 0.02)
        b = _small(rng, (1, 1, 3), 0.02)
        C = np.zeros((content, content, 3))  # pylint: disable=invalid-name
        T = _stripes(rng, size)  # pylint: disable=invalid-name
    else:
        s_color = _small(rng, (1, 1, 3), 0.02)
        b = _small(rng, (1, 1, 3), 0.02)
        C = _content_blob(rng, content)  # pylint: disable=invalid-name
        T = _contour(rng, size)  # pylint: disable=invalid-name

    clipped = [
        np.clip(element, -TRACE_BOUND, TRACE_BOUND)[None]
        for element in (s_color, b, C, T)
    ]

    return TraceElements.of(*clipped)


def gen_spoof(seed: int, medium: str, size: int) -> SyntheticSample:
    """
    A spoof face: a live base (seeded from ``seed``) plus a planted trace of
    ``medium`` composed on that base
    """
    rng = np.random.default_rng(seed)
    base_seed, trace_seed = (
        int(value) for value in rng.integers(0, SEED_SPACE, size=2)
    )
    base = gen_live(base_seed, size)
    planted = gen_trace(trace_seed, medium, size)
    trace = compose(planted, base.image).data[0]

    return SyntheticSample(
        f"spoof-{seed}",
        base.image + trace,
        base.landmarks,
        False,
        seed,
        planted=planted,
        base=base.image,
        medium=Maybe.of(medium),
    )


def gen_dataset(config: DatasetConfig) -> SyntheticDataset:
    """
    ``n_live`` live and ``n_spoof`` spoof samples with distinct seeds. The
    last ``test_fraction`` of each class forms the test split; media cycle
    through ``config.media`` within each split.
    """
    rng = np.random.default_rng(config.seed)
    seeds = rng.choice(SEED_SPACE, size=config.n_live + config.n_spoof, replace=False)
    samples: List[SyntheticSample] = []

    n_test = int(round(config.n_live * config.test_fraction))
    for index in range(config.n_live):
        split = Split.TEST if index >= config.n_live - n_test else Split.TRAIN
        sample = gen_live(int(seeds[index]), config.image_size)
        samples.append(replace(sample, sample_id=f"live-{index:04d}", split=split))

    n_test = int(round(config.n_spoof * config.test_fraction))
    first_test = config.n_spoof - n_test
    for index in range(config.n_spoof):
        split = Split.TEST if index >= first_test else Split.TRAIN
        position = index - first_test if split is Split.TEST else index
        medium = config.media[position % len(config.media)]
        sample = gen_spoof(int(seeds[config.n_live + index]), medium, config.image_size)
        samples.append(replace(sample, sample_id=f"spoof-{index:04d}", split=split))
    LOGGER.info("Generated %d live and %d spoof samples", config.n_live, config.n_spoof)

    return SyntheticDataset(tuple(samples), config)
