# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Config - Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored, keys are the field names of
:py:class:`TrainConfig <spooftrace.train.TrainConfig>` (including the fields
of its nested :py:class:`ModelConfig <spooftrace.models.ModelConfig>` and
:py:class:`LossWeights <spooftrace.losses.LossWeights>`) or of
:py:class:`DatasetConfig <spooftrace.synthdata.DatasetConfig>`. Tuples are
written comma-separated.

Every parser returns an :py:class:`Either`: a :py:class:`Left` carries a
message for the user.
"""

from __future__ import annotations

import dataclasses
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, TypeVar

from pyella.either import Either, left, pure

from spooftrace.errors import SpoofTraceError
from spooftrace.losses import LossWeights
from spooftrace.models import ModelConfig
from spooftrace.synthdata import DatasetConfig
from spooftrace.train import TrainConfig

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")

Entries = Dict[str, str]

NESTED_TRAIN_FIELDS = {"model": ModelConfig, "weights": LossWeights}
# derived from the top-level image size and variant
DERIVED_MODEL_FIELDS = ("image_size", "single_layer_trace")

_TRUE = ("true", "yes", "1")
_FALSE = ("false", "no", "0")


def parse_entries(text: str) -> Either[str, Entries]:
    """
    Split configuration text into raw ``key -> value`` strings

    :return: :py:class:`Left` on a malformed line or a repeated key
    """
    entries: Entries = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, separator, value = content.partition("=")
        key, value = key.strip(), value.strip()
        if not separator or not key:
            return left(f"line {number}: expected 'key = value', got {line.strip()!r}")
        if key in entries:
            return left(f"line {number}: duplicate key {key!r}")
        entries[key] = value

    return pure(entries)


def read_entries(path: Path) -> Either[str, Entries]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        return left(f"cannot read config {path}: {error.strerror or error}")

    return parse_entries(text).map_left(lambda message: f"{path}: {message}")


def _convert_scalar(template: Any, raw: str) -> Either[str, Any]:
    try:
        if isinstance(template, bool):
            if raw.lower() not in _TRUE + _FALSE:
                return left(f"expected a boolean, got {raw!r}")
            return pure(raw.lower() in _TRUE)
        if isinstance(template, Enum):
            return pure(type(template)(raw))
        if isinstance(template, int):
            return pure(int(raw))
        if isinstance(template, float):
            return pure(float(raw))
    except ValueError:
        return left(f"cannot read {raw!r} as {type(template).__name__}")

    return pure(raw)


def convert(template: Any, raw: str) -> Either[str, Any]:
    """
    Read ``raw`` as a value of the same type as ``template``
    """
    if not isinstance(template, tuple):
        return _convert_scalar(template, raw)

    item_template = template[0] if template else ""
    items: List[Any] = []
    for part in (piece.strip() for piece in raw.split(",")):
        converted = _convert_scalar(item_template, part)
        if converted.is_left():
            return converted
        items.append(converted.value)  # type: ignore[attr-defined]

    return pure(tuple(items))


def _apply(
    instance: T, entries: Mapping[str, str], skip: Tuple[str, ...] = ()
) -> Either[str, Dict[str, Any]]:
    changes: Dict[str, Any] = {}
    for item in dataclasses.fields(instance):  # type: ignore[arg-type]
        if item.name not in entries or item.name in skip:
            continue
        converted = convert(getattr(instance, item.name), entries[item.name])
        if converted.is_left():
            return converted.map_left(
                lambda message, name=item.name: f"{name}: {message}"
            )
        changes[item.name] = converted.value  # type: ignore[attr-defined]

    return pure(changes)


def _build(factory: Callable[[], T]) -> Either[str, T]:
    try:
        return pure(factory())
    except (SpoofTraceError, TypeError) as error:
        return left(str(error))


def _known_keys(instance: Any, nested: Optional[Mapping[str, Any]] = None) -> List[str]:
    nested = nested or {}
    keys = [
        item.name for item in dataclasses.fields(instance) if item.name not in nested
    ]
    for name in nested:
        keys.extend(
            item.name
            for item in dataclasses.fields(getattr(instance, name))
            if item.name not in DERIVED_MODEL_FIELDS
        )

    return keys


def _check_unknown(entries: Mapping[str, str], known: List[str]) -> Either[str, None]:
    unknown = sorted(set(entries) - set(known))
    if unknown:
        return left(f"unknown configuration keys: {', '.join(unknown)}")

    return pure(None)


def train_config_from(
    entries: Mapping[str, str], base: Optional[TrainConfig] = None
) -> Either[str, TrainConfig]:
    """
    Override the fields of ``base`` (defaults when omitted) with ``entries``

    :return: :py:class:`Left` on unknown keys, malformed values or an invalid
        combination
    """
    config = base or TrainConfig()

    def _nested(top: Dict[str, Any]) -> Either[str, TrainConfig]:
        nested_changes = {}
        for name in NESTED_TRAIN_FIELDS:
            inner = _apply(getattr(config, name), entries, DERIVED_MODEL_FIELDS)
            if inner.is_left():
                return inner  # type: ignore[return-value]
            nested_changes[name] = inner.value  # type: ignore[attr-defined]

        return _build(
            lambda: dataclasses.replace(
                config,
                **top,
                **{
                    name: dataclasses.replace(getattr(config, name), **changes)
                    for name, changes in nested_changes.items()
                },
            )
        )

    return (
        _check_unknown(entries, _known_keys(config, NESTED_TRAIN_FIELDS))
        .chain(_apply(config, entries, tuple(NESTED_TRAIN_FIELDS)))
        .bind(_nested)
    )


def dataset_config_from(
    entries: Mapping[str, str], base: Optional[DatasetConfig] = None
) -> Either[str, DatasetConfig]:
    "As :py:func:`train_config_from`, for dataset generation"
    config = base or DatasetConfig()

    return (
        _check_unknown(entries, _known_keys(config))
        .chain(_apply(config, entries))
        .bind(lambda changes: _build(lambda: dataclasses.replace(config, **changes)))
    )


def _format_value(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)

    return str(value)


def format_config(config: Any) -> str:
    """
    Render a configuration dataclass as ``key = value`` lines; nested
    configurations are flattened. Parsing the result gives ``config`` back.
    """
    lines = []
    for item in dataclasses.fields(config):
        value = getattr(config, item.name)
        if dataclasses.is_dataclass(value):
            lines.extend(
                f"{inner.name} = {_format_value(getattr(value, inner.name))}"
                for inner in dataclasses.fields(value)
                if inner.name not in DERIVED_MODEL_FIELDS
            )
        else:
            lines.append(f"{item.name} = {_format_value(value)}")

    return "\n".join(lines) + "\n"
