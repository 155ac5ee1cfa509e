# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Checkpoint - Serialization of :py:class:`TrainState <spooftrace.train.TrainState>`.

The header records the model configuration, the run seed, the iteration,
the random generator state and the Adam step counts; the arrays are the parameters,
their Adam moments and the batchnorm running statistics. Equal states
produce byte-identical files.
"""

from __future__ import annotations

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np
from pyella.either import Either, left, pure

from spooftrace.codec import pack_arrays, unpack_arrays
from spooftrace.models import ModelConfig, Networks, init_weights
from spooftrace.optimizer import AdamState
from spooftrace.train import TrainState

LOGGER = logging.getLogger(__name__)

MAGIC = b"SPOOFTRACE-CHECKPOINT 2\n"
HEADER_KEYS = ("iteration", "seed", "model", "rng", "adam")


class _Slot:
    "Where one stored array lives inside a :py:class:`TrainState`"

    def __init__(self, name: str, owner: Any, key: Any):
        self.name = name
        self.owner = owner
        self.key = key

    def get(self) -> np.ndarray:
        if isinstance(self.owner, list):
            return self.owner[self.key]
        return getattr(self.owner, self.key)

    def set(self, value: np.ndarray) -> None:
        if isinstance(self.owner, list):
            self.owner[self.key] = value
        else:
            setattr(self.owner, self.key, value)


def _slots(state: TrainState) -> Iterator[_Slot]:
    networks = state.networks
    for prefix, params, moments in (
        ("generator", networks.generator.parameters(), state.g_moments),
        ("discriminator", networks.discriminator.parameters(), state.d_moments),
    ):
        for index, param in enumerate(params):
            yield _Slot(f"{prefix}.param.{index}", param, "data")
            yield _Slot(f"{prefix}.m.{index}", moments.m, index)
            yield _Slot(f"{prefix}.v.{index}", moments.v, index)
    for index, norm in enumerate(networks.generator.norms()):
        yield _Slot(f"generator.norm.{index}.mean", norm.running, "mean")
        yield _Slot(f"generator.norm.{index}.var", norm.running, "var")


def encode_checkpoint(state: TrainState) -> bytes:
    "The checkpoint bytes of ``state``"
    header = {
        "iteration": state.iteration,
        "seed": state.seed,
        "model": asdict(state.networks.generator.config),
        "rng": state.rng.bit_generator.state,
        "adam": {
            "generator": state.g_moments.step,
            "discriminator": state.d_moments.step,
        },
    }

    return pack_arrays(
        MAGIC, header, [(slot.name, slot.get()) for slot in _slots(state)]
    )


def save_checkpoint(state: TrainState, path: Path) -> None:
    """
    Write ``state`` to ``path``, creating parent directories

    :raises OSError: If the file cannot be written
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state))
    LOGGER.debug("Wrote checkpoint %s at iteration %d", path, state.iteration)


def _model_config(raw: Dict[str, Any]) -> Either[str, ModelConfig]:
    try:
        fields = {
            key: tuple(value) if isinstance(value, list) else value
            for key, value in raw.items()
        }
        return pure(ModelConfig(**fields))
    except TypeError as error:
        return left(f"bad model configuration: {error}")


def _generator(raw: Dict[str, Any]) -> Either[str, np.random.Generator]:
    bit_generator = getattr(np.random, str(raw.get("bit_generator")), None)
    if bit_generator is None:
        return left(f"unknown random generator {raw.get('bit_generator')!r}")
    rng = np.random.Generator(bit_generator())
    try:
        rng.bit_generator.state = raw
    except (TypeError, ValueError, KeyError) as error:
        return left(f"bad random generator state: {error}")

    return pure(rng)


def _restore(
    header: Dict[str, Any], arrays: List[Tuple[str, np.ndarray]], config: ModelConfig
) -> Either[str, TrainState]:
    def _with_rng(rng: np.random.Generator) -> Either[str, TrainState]:
        try:
            iteration, seed = int(header["iteration"]), int(header["seed"])
        except (TypeError, ValueError) as error:
            return left(f"bad iteration or seed: {error}")
        networks = init_weights(np.random.default_rng(0), config)
        state = TrainState(
            networks,
            AdamState.of(networks.generator.parameters()),
            AdamState.of(networks.discriminator.parameters()),
            rng,
            iteration,
            seed,
        )
        try:
            state.g_moments.step = int(header["adam"]["generator"])
            state.d_moments.step = int(header["adam"]["discriminator"])
        except (KeyError, TypeError, ValueError) as error:
            return left(f"bad optimizer header: {error}")

        slots = list(_slots(state))
        if [name for name, _ in arrays] != [slot.name for slot in slots]:
            return left("stored arrays do not match the model configuration")
        for (name, value), slot in zip(arrays, slots):
            if value.shape != np.shape(slot.get()):
                return left(
                    f"{name}: stored shape {value.shape}, "
                    f"model expects {np.shape(slot.get())}"
                )
            slot.set(value)

        return pure(state)

    return _generator(header["rng"]).bind(_with_rng)


def decode_checkpoint(blob: bytes) -> Either[str, TrainState]:
    """
    Rebuild a :py:class:`TrainState` from checkpoint bytes

    :return: :py:class:`Left` with a message if the bytes are not a valid
        checkpoint
    """

    def _decoded(unpacked) -> Either[str, TrainState]:
        header, arrays = unpacked
        missing = [key for key in HEADER_KEYS if key not in header]
        if missing:
            return left(f"checkpoint header lacks {', '.join(missing)}")
        return _model_config(header["model"]).bind(
            lambda config: _restore(header, arrays, config)
        )

    return unpack_arrays(MAGIC, blob).bind(_decoded)


def load_checkpoint(path: Path) -> Either[str, TrainState]:
    """
    Read a checkpoint written by :py:func:`save_checkpoint`

    :return: :py:class:`Left` with a message if the file is missing or invalid
    """
    try:
        blob = path.read_bytes()
    except OSError as error:
        return left(f"cannot read checkpoint {path}: {error.strerror or error}")

    return decode_checkpoint(blob).map_left(lambda message: f"{path}: {message}")


def load_networks(path: Path) -> Either[str, Networks]:
    "The networks of a checkpoint, for inference"
    return load_checkpoint(path).fmap(lambda state: state.networks)
