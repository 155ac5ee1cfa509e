# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Models - The disentanglement generator and the three multiscale PatchGAN
discriminators.

The generator is a U-Net shaped encoder-decoder. The encoder brings an
``N x N`` face down to the bottleneck ``F`` (``N/8``); the Early Spoof
Regressor (ESR) reads only ``F`` and emits the ``K x K`` spoofness map ``M``
(``K = N/16``). The decoder disentangles the trace from coarse to fine:
``s``/``b`` from the pooled bottleneck, ``C`` at ``N/4``, ``T`` at ``N``.

Every hidden conv is followed by a Leaky ReLU and a batchnorm; the heads are
plain convs with bounded activations (sigmoid for ``M``, tanh for ``s``/``b``,
``0.5 * tanh`` for ``C``/``T``).
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from spooftrace.errors import DimensionError
from spooftrace.tensor import (
    RunningStats,
    Tensor,
    batchnorm,
    concat,
    conv2d,
    leaky_relu,
    mean,
    resize_bilinear,
    sigmoid,
    tanh,
    transpose_conv2d,
)
from spooftrace.trace import TraceElements

LOGGER = logging.getLogger(__name__)

INIT_STD = 0.02
LEAKY_SLOPE = 0.2
HEAD_SCALE = 0.5
DISCRIMINATOR_SCALES: Tuple[int, ...] = (1, 2, 4)


class BatchNormMode(Enum):
    """
    How batchnorm layers behave during a forward pass
    """

    #: running statistics, nothing is updated
    INFERENCE = "inference"
    #: batch statistics, running statistics left alone
    BATCH = "batch"
    #: batch statistics folded into the running statistics
    UPDATE = "update"


@dataclass(frozen=True)
class ModelConfig:
    """
    Resolution and widths of the networks. The defaults are the desk-scale
    reference configuration.
    """

    image_size: int = 64
    encoder_widths: Tuple[int, int, int] = (32, 64, 96)
    decoder_widths: Tuple[int, int, int] = (64, 32, 16)
    esr_width: int = 64
    discriminator_widths: Tuple[int, int, int] = (16, 32, 64)
    kernel_size: int = 3
    single_layer_trace: bool = False


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor
    running: RunningStats

    @staticmethod
    def of(channels: int) -> Norm:
        return Norm(
            Tensor(np.ones(channels), requires_grad=True),
            Tensor(np.zeros(channels), requires_grad=True),
            RunningStats.of(channels),
        )


@dataclass
class ConvLayer:
    """
    A conv (or transpose conv) with bias, optionally followed by a Leaky ReLU
    and a batchnorm
    """

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    transpose: bool = False
    activate: bool = True
    norm: Optional[Norm] = None

    def parameters(self) -> List[Tensor]:
        tail = [self.norm.gamma, self.norm.beta] if self.norm is not None else []
        return [self.kernel, self.bias] + tail

    def __call__(self, x: Tensor, mode: BatchNormMode) -> Tensor:
        if self.transpose:
            out = transpose_conv2d(x, self.kernel, self.stride)
        else:
            out = conv2d(x, self.kernel, self.stride, "same")
        out = out + self.bias
        if self.activate:
            out = leaky_relu(out, LEAKY_SLOPE)
        if self.norm is not None:
            out = batchnorm(
                out,
                self.norm.gamma,
                self.norm.beta,
                training=mode is not BatchNormMode.INFERENCE,
                running=None if mode is BatchNormMode.BATCH else self.norm.running,
            )

        return out


class LayerFactory:  # pylint: disable=too-few-public-methods
    """
    Draws conv layers with kernels ~ Normal(0, 0.02) and zero biases from one
    random generator
    """

    def __init__(self, rng: np.random.Generator, kernel_size: int):
        self.rng = rng
        self.kernel_size = kernel_size

    def __call__(
        self,
        c_in: int,
        c_out: int,
        stride: int = 1,
        transpose: bool = False,
        head: bool = False,
        kernel_size: Optional[int] = None,
        normalize: bool = True,
    ) -> ConvLayer:
        size = kernel_size or self.kernel_size
        shape = (size, size, c_out, c_in) if transpose else (size, size, c_in, c_out)

        return ConvLayer(
            kernel=Tensor(
                self.rng.normal(0.0, INIT_STD, size=shape), requires_grad=True
            ),
            bias=Tensor(np.zeros(c_out), requires_grad=True),
            stride=stride,
            transpose=transpose,
            activate=not head,
            norm=None if head or not normalize else Norm.of(c_out),
        )


@dataclass
class GeneratorParams:  # pylint: disable=too-many-instance-attributes
    """
    Encoder stages, ESR, decoder stages with U-Net shortcuts and the four
    trace heads
    """

    config: ModelConfig
    stem: ConvLayer
    encoder: List[ConvLayer]
    esr: List[ConvLayer]
    sb_head: ConvLayer
    upsample: List[ConvLayer]
    fuse: List[ConvLayer]
    content_head: ConvLayer
    texture_head: ConvLayer

    def encoder_layers(self) -> List[ConvLayer]:
        return [self.stem] + self.encoder

    def decoder_layers(self) -> List[ConvLayer]:
        return (
            [self.sb_head]
            + [layer for pair in zip(self.upsample, self.fuse) for layer in pair]
            + [self.content_head, self.texture_head]
        )

    def layers(self) -> List[ConvLayer]:
        "Every layer in declaration order"
        return self.encoder_layers() + self.esr + self.decoder_layers()

    def parameters(self) -> List[Tensor]:
        return [param for layer in self.layers() for param in layer.parameters()]

    def norms(self) -> List[Norm]:
        return [layer.norm for layer in self.layers() if layer.norm is not None]


@dataclass
class DiscriminatorParams:
    """
    ``D1``, ``D2``, ``D3``: seven convs each, three of them downsampling,
    ending in a 2-channel (live, spoof) patch map
    """

    config: ModelConfig
    networks: List[List[ConvLayer]] = field(default_factory=list)

    def layers(self) -> List[ConvLayer]:
        return [layer for network in self.networks for layer in network]

    def parameters(self) -> List[Tensor]:
        return [param for layer in self.layers() for param in layer.parameters()]


@dataclass
class Networks:
    generator: GeneratorParams
    discriminator: DiscriminatorParams


@dataclass(frozen=True)
class GeneratorOutput:
    """
    The disentangled trace and the spoofness map ``M[B,K,K]``, values in (0, 1)
    """

    elements: TraceElements
    spoof_map: Tensor


def init_generator(rng: np.random.Generator, config: ModelConfig) -> GeneratorParams:
    """
    Draw generator weights: kernels ~ Normal(0, 0.02), zero biases,
    batchnorm gamma 1 and beta 0
    """
    make = LayerFactory(rng, config.kernel_size)
    e0, e1, e2 = config.encoder_widths
    d0, d1, d2 = config.decoder_widths

    stem = make(3, e0)
    encoder: List[ConvLayer] = []
    c_in = e0
    for width in config.encoder_widths:
        encoder.append(make(c_in, width))
        encoder.append(make(width, width, stride=2))
        c_in = width

    return GeneratorParams(
        config=config,
        stem=stem,
        encoder=encoder,
        esr=[
            make(e2, config.esr_width, stride=2),
            make(config.esr_width, config.esr_width),
            make(config.esr_width, 1, head=True, kernel_size=1),
        ],
        sb_head=make(e2, 6, head=True, kernel_size=1),
        upsample=[
            make(e2, d0, stride=2, transpose=True),
            make(d0, d1, stride=2, transpose=True),
            make(d1, d2, stride=2, transpose=True),
        ],
        fuse=[make(d0 + e1, d0), make(d1 + e0, d1), make(d2 + e0, d2)],
        content_head=make(d0, 3, head=True),
        texture_head=make(d2, 3, head=True),
    )


def init_discriminator(
    rng: np.random.Generator, config: ModelConfig
) -> DiscriminatorParams:
    "Draw the weights of the three discriminators"
    make = LayerFactory(rng, config.kernel_size)
    w0, w1, w2 = config.discriminator_widths
    plan = ((3, w0, 1), (w0, w0, 2), (w0, w1, 1), (w1, w1, 2), (w1, w2, 1), (w2, w2, 2))

    networks = []
    for _ in DISCRIMINATOR_SCALES:
        # no batchnorm: real and generated streams are judged independently
        layers = [
            make(c_in, c_out, stride=stride, normalize=False)
            for c_in, c_out, stride in plan
        ]
        layers.append(make(w2, 2, head=True))
        networks.append(layers)

    return DiscriminatorParams(config, networks)


def init_weights(
    rng: np.random.Generator, config: Optional[ModelConfig] = None
) -> Networks:
    """
    Initialize generator and discriminators from one seeded generator, in
    declaration order
    """
    config = config or ModelConfig()

    return Networks(init_generator(rng, config), init_discriminator(rng, config))


def _check_size(img: Tensor, divisor: int) -> None:
    if img.ndim != 4 or img.shape[3] != 3:
        raise DimensionError(f"expected [B,N,N,3] images, got {img.shape}")
    if img.shape[1] != img.shape[2] or img.shape[1] % divisor:
        raise DimensionError(
            f"image size must be square and divisible by {divisor}, got {img.shape}"
        )


def encode(params: GeneratorParams, img: Tensor, mode: BatchNormMode) -> List[Tensor]:
    """
    Run the encoder

    :return: The feature maps at ``N``, ``N/2``, ``N/4`` and the bottleneck ``F``
    """
    features = [params.stem(img, mode)]
    for stage in range(0, len(params.encoder), 2):
        hidden = params.encoder[stage](features[-1], mode)
        features.append(params.encoder[stage + 1](hidden, mode))

    return features


def early_spoof_regressor(
    params: GeneratorParams, bottleneck: Tensor, mode: BatchNormMode
) -> Tensor:
    "``M[B,K,K]`` from the bottleneck alone"
    hidden = bottleneck
    for layer in params.esr:
        hidden = layer(hidden, mode)
    spoof_map = sigmoid(hidden)

    return spoof_map.reshape(*spoof_map.shape[:3])


def generator_forward(
    params: GeneratorParams, img: Tensor, mode: BatchNormMode = BatchNormMode.INFERENCE
) -> GeneratorOutput:
    """
    Disentangle the spoof trace of a batch of faces

    :raises DimensionError: If the images are not ``[B,N,N,3]`` with ``N``
        divisible by 16
    """
    _check_size(img, 16)
    full, half, quarter, bottleneck = encode(params, img, mode)
    spoof_map = early_spoof_regressor(params, bottleneck, mode)

    pooled = mean(bottleneck, axis=(1, 2), keepdims=True)
    biases = tanh(params.sb_head(pooled, mode))
    s_color, b = biases[..., 0:3], biases[..., 3:6]

    hidden = params.upsample[0](bottleneck, mode)
    hidden = params.fuse[0](concat([hidden, quarter], axis=-1), mode)
    content = tanh(params.content_head(hidden, mode)) * HEAD_SCALE

    hidden = params.upsample[1](hidden, mode)
    hidden = params.fuse[1](concat([hidden, half], axis=-1), mode)
    hidden = params.upsample[2](hidden, mode)
    hidden = params.fuse[2](concat([hidden, full], axis=-1), mode)
    texture = tanh(params.texture_head(hidden, mode)) * HEAD_SCALE

    if params.config.single_layer_trace:
        s_color, b, content = s_color * 0.0, b * 0.0, content * 0.0

    return GeneratorOutput(TraceElements(s_color, b, content, texture), spoof_map)


def discriminator_forward(params: DiscriminatorParams, img: Tensor) -> List[Tensor]:
    """
    Judge a batch of faces at full, half and quarter resolution

    :raises DimensionError: If ``N`` is not divisible by 32

    :return: Three ``[B, N/(8s), N/(8s), 2]`` maps; channel 0 scores the live
        domain, channel 1 the spoof domain
    """
    _check_size(img, 32)
    size = img.shape[1]
    maps = []
    for scale, network in zip(DISCRIMINATOR_SCALES, params.networks):
        side = size // scale
        hidden = img if scale == 1 else resize_bilinear(img, side, side)
        for layer in network:
            hidden = layer(hidden, BatchNormMode.INFERENCE)
        maps.append(hidden)

    return maps


def count_parameters(layers: Sequence[ConvLayer]) -> int:
    return sum(param.size for layer in layers for param in layer.parameters())


@contextlib.contextmanager
def frozen(params: Sequence[Tensor]) -> Iterator[None]:
    """
    Exclude ``params`` from the graph for the duration of the block
    """
    previous = [param.requires_grad for param in params]
    for param in params:
        param.requires_grad = False
    try:
        yield
    finally:
        for param, flag in zip(params, previous):
            param.requires_grad = flag
