# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Trace - The four-element spoof trace ``{s, b, C, T}`` and the algebra built on
it: composing the trace image ``s*I + b + resize(C) + T``, reconstructing the
live counterpart of a spoof, transplanting a trace onto another face and
creating "harder" samples by dropping one element.

All tensors are batched: ``s`` and ``b`` are ``[B,1,1,3]``, ``C`` is
``[B,L,L,3]`` with ``L = N/4`` and ``T`` is ``[B,N,N,3]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from spooftrace.errors import DimensionError
from spooftrace.tensor import (
    Tensor,
    TensorLike,
    as_tensor,
    detach,
    resize_bilinear,
    stack,
)
from spooftrace.warp3d import DenseOffset, LandmarkSet, warp_trace

ELEMENT_TAGS: Tuple[str, ...] = ("s", "b", "C", "T")
CONTENT_RATIO = 4


@dataclass(frozen=True)
class TraceElements:
    """
    A batch of spoof traces in their disentangled form
    """

    s_color: Tensor
    b: Tensor
    C: Tensor  # pylint: disable=invalid-name
    T: Tensor  # pylint: disable=invalid-name

    @staticmethod
    def zeros(batch: int, size: int) -> TraceElements:
        "The live trace: every element zero"
        content = size // CONTENT_RATIO
        return TraceElements(
            Tensor(np.zeros((batch, 1, 1, 3))),
            Tensor(np.zeros((batch, 1, 1, 3))),
            Tensor(np.zeros((batch, content, content, 3))),
            Tensor(np.zeros((batch, size, size, 3))),
        )

    @staticmethod
    def of(s_color, b, C, T) -> TraceElements:  # pylint: disable=invalid-name
        "Build from plain arrays"
        return TraceElements(
            as_tensor(s_color), as_tensor(b), as_tensor(C), as_tensor(T)
        )

    @property
    def batch_size(self) -> int:
        return self.T.shape[0]

    @property
    def size(self) -> int:
        return self.T.shape[1]

    def elements(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.s_color, self.b, self.C, self.T

    def fmap(self, apply: Callable[[Tensor], Tensor]) -> TraceElements:
        "Apply the same tensor function to every element"
        return TraceElements(*(apply(element) for element in self.elements()))

    def rows(self, start: int, stop: int) -> TraceElements:
        "The samples ``start:stop`` of the batch"
        return self.fmap(lambda element: element[start:stop])

    def detach(self) -> TraceElements:
        return self.fmap(detach)


def _as_batch(img: TensorLike) -> Tensor:
    image = as_tensor(img)
    if image.ndim == 3:
        image = image.reshape(1, *image.shape)

    return image


def compose(elems: TraceElements, img: TensorLike) -> Tensor:
    """
    The trace image ``s*I + b + resize(C, N, N) + T``, differentiable through
    all four elements (and the image)

    :raises DimensionError: If the image and the elements disagree on size
    """
    image = _as_batch(img)
    if image.ndim != 4 or image.shape[1:] != elems.T.shape[1:]:
        raise DimensionError(
            f"image {image.shape} does not match texture {elems.T.shape}"
        )
    size = image.shape[1]
    if elems.C.shape[1] >= size:
        raise DimensionError(
            f"content pattern {elems.C.shape} must be smaller than {size}"
        )

    content = resize_bilinear(elems.C, size, size)

    return elems.s_color * image + elems.b + content + elems.T


def reconstruct_live(img: TensorLike, elems: TraceElements) -> Tensor:
    """
    The live counterpart ``I - G(I)``. Values may leave ``[0, 1]``; clamp only
    for export.

    :raises DimensionError: As :py:func:`compose`
    """
    image = _as_batch(img)

    return image - compose(elems, image)


def trace_display(values: TensorLike) -> np.ndarray:
    """
    Display intensities of trace values, ``v -> clamp(0.5 + v / 2)``: zero
    shows as mid gray, ``-1`` as black and ``1`` as white
    """
    return np.clip(0.5 + np.asarray(as_tensor(values).data) / 2.0, 0.0, 1.0)


@dataclass(frozen=True)
class SynthesizedSpoof:
    """
    A live face with a transplanted trace; ``warped_trace`` is the ground truth
    trace of ``image``
    """

    image: Tensor
    warped_trace: Tensor


def synthesize_spoof(
    live: TensorLike,
    live_lm: LandmarkSet,
    src_trace_img: Tensor,
    src_lm: LandmarkSet,
    offset: Optional[DenseOffset] = None,
) -> SynthesizedSpoof:
    """
    Warp the trace of a spoof face (drawn on ``src_lm``) onto the geometry of
    ``live_lm`` and add it to the live face

    :raises DimensionError: If the live face and the trace differ in shape
    :raises DegenerateGeometryError: If the landmarks cannot be triangulated
    """
    face = as_tensor(live)
    if face.shape != src_trace_img.shape:
        raise DimensionError(f"live face {face.shape} vs trace {src_trace_img.shape}")
    warped = warp_trace(src_trace_img, src_lm, live_lm, offset)

    return SynthesizedSpoof(face + warped, warped)


def synthesize_batch(
    live: Tensor,
    live_lms: Sequence[LandmarkSet],
    src_traces: Tensor,
    src_lms: Sequence[LandmarkSet],
) -> SynthesizedSpoof:
    """
    :py:func:`synthesize_spoof` over a batch, pairing sample ``k`` of the live
    faces with sample ``k`` of the traces
    """
    paired = len(live_lms) == len(src_lms) == live.shape[0]
    if live.shape != src_traces.shape or not paired:
        raise DimensionError(f"cannot pair {live.shape} with {src_traces.shape}")
    warped: List[Tensor] = [
        warp_trace(src_traces[k], src_lms[k], live_lms[k]) for k in range(live.shape[0])
    ]
    traces = stack(warped)

    return SynthesizedSpoof(live + traces, traces)


def draw_hardening(rng: np.random.Generator, batch: int) -> np.ndarray:
    "For every sample, the index into ``ELEMENT_TAGS`` of the element to drop"
    return rng.integers(0, len(ELEMENT_TAGS), size=batch)


def apply_hardening(elems: TraceElements, choices: np.ndarray) -> TraceElements:
    """
    Zero element ``choices[k]`` of sample ``k``, keep everything else as is

    :raises DimensionError: If there is not one choice per sample
    """
    if choices.shape != (elems.batch_size,):
        raise DimensionError(f"need {elems.batch_size} choices, got {choices.shape}")
    masks = [
        Tensor((choices != tag).astype(np.float64).reshape(-1, 1, 1, 1))
        for tag in range(len(ELEMENT_TAGS))
    ]

    return TraceElements(
        *(element * mask for element, mask in zip(elems.elements(), masks))
    )


def harden(elems: TraceElements, rng: np.random.Generator) -> TraceElements:
    """
    Create "harder" samples: per sample, one element drawn uniformly from
    ``{s, b, C, T}`` is replaced by zeros.

    Dropping an element never raises the norm of the composed trace when the
    remaining contributions agree in sign or do not overlap. A single-layer
    trace only carries ``T``, so hardening it either changes nothing or
    removes the whole trace; training skips it for those variants.
    """
    return apply_hardening(elems, draw_hardening(rng, elems.batch_size))
