# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Losses - The five training losses and the two step totals.

Expectations are per-batch means over the samples of the relevant domain;
adversarial terms are means over patch locations, summed over the three
discriminator scales. The adversarial objective is least squares: real
target 1, fake target 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from spooftrace.errors import DimensionError, DomainError
from spooftrace.tensor import Tensor, absolute, as_tensor, detach, mean, square, sum_

Scalar = Union[Tensor, float]

SCALES = 3


@dataclass(frozen=True)
class LossWeights:  # pylint: disable=too-many-instance-attributes
    """
    Weights of the step totals (``alpha1``..``alpha5``), of live traces in the
    regularizer (``beta``) and of the trace term in the score (``alpha0``)

    :raises DomainError: If ``beta`` does not exceed 1
    """

    alpha1: float = 1.0
    alpha2: float = 100.0
    alpha3: float = 1e-3
    alpha4: float = 50.0
    alpha5: float = 1.0
    beta: float = 1e4
    alpha0: float = 1.0

    def __post_init__(self):
        if not self.beta > 1.0:
            raise DomainError(f"beta must be > 1, got {self.beta}")


def esr_loss(spoof_maps: Tensor, is_live: Sequence[bool]) -> Tensor:
    """
    L1 pull of ``M`` towards 0 for live faces and towards 1 for spoof and
    synthesized faces, normalized by ``K^2``

    :raises DomainError: On an empty batch
    :raises DimensionError: If there is not one label per map
    """
    labels = np.asarray(is_live, dtype=bool)
    if spoof_maps.shape[0] == 0:
        raise DomainError("esr loss over an empty batch")
    if labels.shape != (spoof_maps.shape[0],):
        raise DimensionError(f"{spoof_maps.shape[0]} maps but {labels.shape} labels")
    area = float(np.prod(spoof_maps.shape[1:]))

    loss: Scalar = 0.0
    live = np.nonzero(labels)[0]
    if live.size:
        loss = loss + sum_(absolute(spoof_maps[live])) / float(live.size)
    spoof = np.nonzero(~labels)[0]
    if spoof.size:
        loss = loss + sum_(absolute(spoof_maps[spoof] - 1.0)) / float(spoof.size)

    return as_tensor(loss) / area


def _check_scales(*streams: Sequence[Tensor]) -> None:
    for stream in streams:
        if len(stream) != SCALES:
            raise DimensionError(
                f"expected {SCALES} discriminator scales, got {len(stream)}"
            )


def patch_mean_square(maps: Tensor, channel: int, target: float) -> Tensor:
    "``mean((D^channel - target)^2)`` over batch and patch locations"
    return mean(square(maps[..., channel] - target))


def gen_adv_loss(
    d_recon_live: Sequence[Tensor], d_synth_spoof: Sequence[Tensor]
) -> Tensor:
    """
    Push reconstructed live faces towards the live channel and synthesized
    spoofs towards the spoof channel of every discriminator

    :raises DimensionError: If a scale is missing
    """
    _check_scales(d_recon_live, d_synth_spoof)
    loss: Scalar = 0.0
    for recon, synth in zip(d_recon_live, d_synth_spoof):
        loss = (
            loss + patch_mean_square(recon, 0, 1.0) + patch_mean_square(synth, 1, 1.0)
        )

    return as_tensor(loss)


def disc_adv_loss(
    d_real_live: Sequence[Tensor],
    d_real_spoof: Sequence[Tensor],
    d_recon_live: Sequence[Tensor],
    d_synth_spoof: Sequence[Tensor],
) -> Tensor:
    """
    Teach every discriminator real live vs. reconstructed live (channel 0) and
    real spoof vs. synthesized spoof (channel 1)

    :raises DimensionError: If a stream misses a scale
    """
    _check_scales(d_real_live, d_real_spoof, d_recon_live, d_synth_spoof)
    loss: Scalar = 0.0
    for live, spoof, recon, synth in zip(
        d_real_live, d_real_spoof, d_recon_live, d_synth_spoof
    ):
        loss = (
            loss
            + patch_mean_square(live, 0, 1.0)
            + patch_mean_square(spoof, 1, 1.0)
            + patch_mean_square(recon, 0, 0.0)
            + patch_mean_square(synth, 1, 0.0)
        )

    return as_tensor(loss)


def _mean_squared_norm(traces: Optional[Tensor]) -> Scalar:
    if traces is None or traces.shape[0] == 0:
        return 0.0

    return sum_(square(traces)) / float(traces.shape[0])


def regularizer_loss(
    trace_live: Optional[Tensor], trace_spoof: Optional[Tensor], beta: float
) -> Tensor:
    """
    ``beta * E_live ||G(I)||^2 + E_spoof ||G(I)||^2`` over composed trace
    images; ``||.||^2`` is the plain sum of squares of one sample
    """
    return as_tensor(
        beta * _mean_squared_norm(trace_live) + _mean_squared_norm(trace_spoof)
    )


def pixel_loss(recovered: Tensor, target_warped_trace: Tensor) -> Tensor:
    """
    Mean absolute difference between the trace recovered from a synthesized
    spoof and the trace that was planted into it. The target is detached, so
    only the recovered trace receives gradients.

    :raises DimensionError: If the shapes differ
    """
    if recovered.shape != target_warped_trace.shape:
        raise DimensionError(f"{recovered.shape} vs {target_warped_trace.shape}")

    return mean(absolute(recovered - detach(target_warped_trace)))


def total_generator_loss(
    l_g: Scalar, l_esr: Scalar, l_r: Scalar, weights: LossWeights = LossWeights()
) -> Tensor:
    "Generator step objective ``a1*L_G + a2*L_ESR + a3*L_R``"
    return as_tensor(
        weights.alpha1 * as_tensor(l_g)
        + weights.alpha2 * as_tensor(l_esr)
        + weights.alpha3 * as_tensor(l_r)
    )


def total_supervision_loss(
    l_esr: Scalar, l_p: Scalar, weights: LossWeights = LossWeights()
) -> Tensor:
    "Supervision step objective ``a4*L_ESR + a5*L_P``"
    return as_tensor(
        weights.alpha4 * as_tensor(l_esr) + weights.alpha5 * as_tensor(l_p)
    )
