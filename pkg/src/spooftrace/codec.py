# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Codec - Reading and writing the on-disk artifacts: binary PPM images,
landmark CSVs, trace element files, the dataset manifest, score files and
metric reports.

Decoders never raise on bad input, they return a :py:class:`Left` with a
message instead.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pyella.either import Either, left, lefts, pure, rights
from pyella.maybe import Maybe, nothing

from spooftrace.config import dataset_config_from, format_config, read_entries
from spooftrace.errors import DimensionError, SpoofTraceError
from spooftrace.evaluation import Label, MetricsReport, ScoreRecord
from spooftrace.synthdata import DatasetConfig, Split, SyntheticDataset, SyntheticSample
from spooftrace.trace import ELEMENT_TAGS, TraceElements
from spooftrace.warp3d import LandmarkSet

LOGGER = logging.getLogger(__name__)

WIRE_DTYPE = np.dtype("<f8")
TRACE_MAGIC = b"SPOOFTRACE-TRACE 1\n"
MANIFEST_COLUMNS = ("id", "label", "medium", "seed")
SCORE_COLUMNS = ("id", "label", "medium", "score")
SPLIT_COLUMNS = ("id", "split")

_PPM_HEADER = re.compile(
    rb"\AP6(?:\s+|#[^\n]*\n)+?(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s"
)


def pack_arrays(
    magic: bytes, header: Dict[str, Any], arrays: Sequence[Tuple[str, np.ndarray]]
) -> bytes:
    """
    ``magic``, one line of JSON (``header`` plus the names and shapes of
    ``arrays``) and the little-endian float64 data of the arrays
    """
    described = dict(
        header, arrays=[[name, list(np.shape(array))] for name, array in arrays]
    )
    body = b"".join(
        np.asarray(array).astype(WIRE_DTYPE).tobytes() for _, array in arrays
    )

    return magic + json.dumps(described, sort_keys=True).encode("utf-8") + b"\n" + body


def unpack_arrays(
    magic: bytes, blob: bytes
) -> Either[str, Tuple[Dict[str, Any], List[Tuple[str, np.ndarray]]]]:
    "Inverse of :py:func:`pack_arrays`"
    if not blob.startswith(magic):
        return left(f"missing {magic.strip().decode('ascii', 'replace')} signature")
    line_end = blob.find(b"\n", len(magic))
    if line_end < 0:
        return left("header is not terminated")
    try:
        header = json.loads(blob[len(magic) : line_end].decode("utf-8"))
        described = [
            (str(name), tuple(int(dim) for dim in shape))
            for name, shape in header.pop("arrays")
        ]
    except (
        UnicodeDecodeError, ValueError, KeyError, TypeError, AttributeError
    ) as error:
        return left(f"bad header: {error}")

    body = memoryview(blob)[line_end + 1 :]
    arrays: List[Tuple[str, np.ndarray]] = []
    offset = 0
    for name, shape in described:
        count = int(np.prod(shape, dtype=np.int64))
        if offset + count * WIRE_DTYPE.itemsize > len(body):
            return left(f"data truncated at {name!r}")
        values = np.frombuffer(body, WIRE_DTYPE, count, offset).astype(np.float64)
        arrays.append((name, values.reshape(shape)))
        offset += count * WIRE_DTYPE.itemsize
    if offset != len(body):
        return left(f"{len(body) - offset} trailing bytes")

    return pure((header, arrays))


def encode_ppm(image: np.ndarray) -> bytes:
    """
    Binary PPM (P6, maxval 255). Values are clamped to ``[0, 1]`` and rounded.

    :raises DimensionError: If ``image`` is not ``H x W x 3``
    """
    pixels = np.asarray(image, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DimensionError(f"PPM needs an H x W x 3 image, got {pixels.shape}")
    quantized = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape[:2]

    return f"P6\n{width} {height}\n255\n".encode("ascii") + quantized.tobytes()


def decode_ppm(blob: bytes) -> Either[str, np.ndarray]:
    "An ``H x W x 3`` image with values in ``[0, 1]``"
    match = _PPM_HEADER.match(blob)
    if match is None:
        return left("not a binary (P6) PPM image")
    width, height, maxval = (int(group) for group in match.groups())
    if not 0 < maxval < 256:
        return left(f"unsupported PPM maxval {maxval}")
    data = blob[match.end() :]
    if len(data) != width * height * 3:
        return left(f"PPM holds {len(data)} bytes, expected {width * height * 3}")

    return pure(np.frombuffer(data, np.uint8).reshape(height, width, 3) / float(maxval))


def write_ppm(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(image))


def _read_bytes(path: Path) -> Either[str, bytes]:
    try:
        return pure(path.read_bytes())
    except OSError as error:
        return left(f"cannot read {path}: {error.strerror or error}")


def _read_text(path: Path) -> Either[str, str]:
    return _read_bytes(path).bind(
        lambda blob: _decode_utf8(blob).map_left(lambda message: f"{path}: {message}")
    )


def _decode_utf8(blob: bytes) -> Either[str, str]:
    try:
        return pure(blob.decode("utf-8"))
    except UnicodeDecodeError as error:
        return left(str(error))


def read_ppm(path: Path) -> Either[str, np.ndarray]:
    return _read_bytes(path).bind(
        lambda blob: decode_ppm(blob).map_left(lambda message: f"{path}: {message}")
    )


def encode_landmarks(landmarks: LandmarkSet) -> str:
    "CSV with an ``x,y`` header and one row per landmark, in round-trip precision"
    rows = [f"{x!r},{y!r}" for x, y in landmarks.points.tolist()]

    return "\n".join(["x,y"] + rows) + "\n"


def decode_landmarks(text: str) -> Either[str, LandmarkSet]:
    rows = [row for row in csv.reader(io.StringIO(text)) if row]
    if not rows or [cell.strip() for cell in rows[0]] != ["x", "y"]:
        return left("landmark CSV must start with an 'x,y' header")
    try:
        points = [(float(x), float(y)) for x, y in rows[1:]]
    except ValueError as error:
        return left(f"bad landmark row: {error}")
    if len(points) < 3:
        return left(f"need at least 3 landmarks, got {len(points)}")
    if not np.all(np.isfinite(points)):
        return left("landmarks must be finite")

    return pure(LandmarkSet.of(points))


def write_landmarks(path: Path, landmarks: LandmarkSet) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(encode_landmarks(landmarks), encoding="utf-8")


def read_landmarks(path: Path) -> Either[str, LandmarkSet]:
    return _read_text(path).bind(
        lambda text: decode_landmarks(text).map_left(
            lambda message: f"{path}: {message}"
        )
    )


def encode_trace(elements: TraceElements, base: Maybe[np.ndarray] = nothing) -> bytes:
    """
    The trace elements of one sample and, optionally, the live base the
    trace was composed on
    """
    arrays = [
        (tag, element.numpy()[0])
        for tag, element in zip(ELEMENT_TAGS, elements.elements())
    ]
    if not base.is_nothing():
        arrays.append(("base", base.from_maybe(None)))

    return pack_arrays(TRACE_MAGIC, {}, arrays)


def decode_trace(blob: bytes) -> Either[str, Tuple[TraceElements, Maybe[np.ndarray]]]:
    def _assemble(unpacked) -> Either[str, Tuple[TraceElements, Maybe[np.ndarray]]]:
        _, arrays = unpacked
        named = dict(arrays)
        if [name for name, _ in arrays[:4]] != list(ELEMENT_TAGS):
            return left(f"trace file must start with the elements {ELEMENT_TAGS}")
        try:
            elements = TraceElements.of(*(named[tag][None] for tag in ELEMENT_TAGS))
        except SpoofTraceError as error:
            return left(str(error))
        return pure((elements, Maybe.of(named.get("base"))))

    return unpack_arrays(TRACE_MAGIC, blob).bind(_assemble)


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    label: Label
    seed: int
    medium: Maybe[str] = field(default_factory=lambda: nothing)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)

    return buffer.getvalue()


def _csv_rows(text: str, columns: Sequence[str]) -> Either[str, List[Dict[str, str]]]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != tuple(columns):
        return left(f"expected columns {','.join(columns)}, got {reader.fieldnames}")

    return pure(list(reader))


def _label(raw: str) -> Either[str, Label]:
    try:
        return pure(Label(raw))
    except ValueError:
        return left(f"unknown label {raw!r}")


def _medium(raw: str) -> Maybe[str]:
    return Maybe.of(raw or None)


def encode_manifest(rows: Sequence[ManifestRow]) -> str:
    return _csv_text(
        MANIFEST_COLUMNS,
        [
            (row.sample_id, row.label.value, row.medium.from_maybe(""), row.seed)
            for row in rows
        ],
    )


def decode_manifest(text: str) -> Either[str, List[ManifestRow]]:
    def _row(raw: Dict[str, str]) -> Either[str, ManifestRow]:
        try:
            seed = int(raw["seed"])
        except ValueError:
            return left(f"{raw['id']}: bad seed {raw['seed']!r}")
        return _label(raw["label"]).fmap(
            lambda label: ManifestRow(raw["id"], label, seed, _medium(raw["medium"]))
        )

    return _csv_rows(text, MANIFEST_COLUMNS).bind(
        lambda rows: _collect([_row(row) for row in rows])
    )


def _collect(parsed: List[Either[str, Any]]) -> Either[str, List[Any]]:
    errors = lefts(parsed)
    if errors:
        return left("; ".join(errors))

    return pure(rights(parsed))


def encode_scores(records: Sequence[ScoreRecord]) -> str:
    return _csv_text(
        SCORE_COLUMNS,
        [
            (
                record.sample_id,
                record.label.value,
                record.medium.from_maybe(""),
                repr(record.score),
            )
            for record in records
        ],
    )


def decode_scores(text: str) -> Either[str, List[ScoreRecord]]:
    def _row(raw: Dict[str, str]) -> Either[str, ScoreRecord]:
        try:
            value = float(raw["score"])
        except ValueError:
            return left(f"{raw['id']}: bad score {raw['score']!r}")
        if not np.isfinite(value):
            return left(f"{raw['id']}: score is not finite")
        return _label(raw["label"]).fmap(
            lambda label: ScoreRecord(value, label, _medium(raw["medium"]), raw["id"])
        )

    return _csv_rows(text, SCORE_COLUMNS).bind(
        lambda rows: _collect([_row(row) for row in rows])
    )


def report_values(report: MetricsReport, alpha0: float) -> Dict[str, float]:
    return dict(report.as_dict(), alpha0=alpha0)


def encode_report_text(
    report: MetricsReport,
    alpha0: float,
    sweep: Optional[Sequence[Tuple[float, float]]] = None,
) -> str:
    "The human-readable report"
    lines = [
        f"EER          {report.eer:.4%}",
        f"threshold    {report.threshold:.6g}",
        f"APCER        {report.apcer:.4%}",
        f"BPCER        {report.bpcer:.4%}",
        f"ACER         {report.acer:.4%}",
        f"TDR@FDR={report.fdr_target:.1%} {report.tdr_at_fdr:.4%}",
        f"alpha0       {alpha0:.6g}",
    ]
    if sweep:
        lines.append("")
        lines.append("alpha0 calibration (validation EER)")
        lines.extend(f"  {alpha:<12.6g} {eer:.4%}" for alpha, eer in sweep)

    return "\n".join(lines) + "\n"


def encode_report_json(report: MetricsReport, alpha0: float) -> str:
    "The machine-readable report, one JSON object"
    return json.dumps(report_values(report, alpha0), indent=2, sort_keys=True) + "\n"


def _split_text(dataset: SyntheticDataset) -> str:
    return _csv_text(
        SPLIT_COLUMNS, [(s.sample_id, s.split.value) for s in dataset.samples]
    )


def write_dataset(dataset: SyntheticDataset, directory: Path) -> None:
    """
    Export to ``directory``: ``manifest.csv``, ``split.csv``, ``config.txt``,
    ``images/<id>.ppm``, ``landmarks/<id>.csv`` and, for spoof samples,
    ``traces/<id>.trace`` with the planted elements and the live base

    :raises OSError: If a file cannot be written
    """
    rows = []
    for sample in dataset.samples:
        write_ppm(directory / "images" / f"{sample.sample_id}.ppm", sample.image)
        write_landmarks(
            directory / "landmarks" / f"{sample.sample_id}.csv", sample.landmarks
        )
        if sample.planted is not None:
            trace_path = directory / "traces" / f"{sample.sample_id}.trace"
            trace_path.parent.mkdir(parents=True, exist_ok=True)
            trace_path.write_bytes(encode_trace(sample.planted, Maybe.of(sample.base)))
        label = Label.LIVE if sample.is_live else Label.SPOOF
        rows.append(ManifestRow(sample.sample_id, label, sample.seed, sample.medium))
    (directory / "manifest.csv").write_text(encode_manifest(rows), encoding="utf-8")
    (directory / "split.csv").write_text(_split_text(dataset), encoding="utf-8")
    (directory / "config.txt").write_text(
        format_config(dataset.config), encoding="utf-8"
    )
    LOGGER.info("Wrote %d samples to %s", len(rows), directory)


def _read_sample(
    directory: Path, row: ManifestRow, split: Split
) -> Either[str, SyntheticSample]:
    trace_path = directory / "traces" / f"{row.sample_id}.trace"

    def _with_trace(sample: SyntheticSample) -> Either[str, SyntheticSample]:
        if sample.is_live:
            return pure(sample)
        return (
            _read_bytes(trace_path)
            .bind(
                lambda blob: decode_trace(blob).map_left(
                    lambda message: f"{trace_path}: {message}"
                )
            )
            .fmap(
                lambda trace: replace(
                    sample, planted=trace[0], base=trace[1].to_optional()
                )
            )
        )

    def _with_image(image: np.ndarray) -> Either[str, SyntheticSample]:
        return read_landmarks(directory / "landmarks" / f"{row.sample_id}.csv").fmap(
            lambda landmarks: SyntheticSample(
                row.sample_id,
                image,
                landmarks,
                row.label is Label.LIVE,
                row.seed,
                medium=row.medium,
                split=split,
            )
        )

    return (
        read_ppm(directory / "images" / f"{row.sample_id}.ppm")
        .bind(_with_image)
        .bind(_with_trace)
    )


def _splits(text: str) -> Either[str, Dict[str, Split]]:
    def _assign(rows: List[Dict[str, str]]) -> Either[str, Dict[str, Split]]:
        try:
            return pure({row["id"]: Split(row["split"]) for row in rows})
        except ValueError as error:
            return left(str(error))

    return _csv_rows(text, SPLIT_COLUMNS).bind(_assign)


def read_dataset(directory: Path) -> Either[str, SyntheticDataset]:
    """
    Import a dataset written by :py:func:`write_dataset`. Images come back
    quantized to 8 bits.
    """

    def _with_config(config: DatasetConfig) -> Either[str, SyntheticDataset]:
        def _with_splits(splits: Dict[str, Split]) -> Either[str, SyntheticDataset]:
            def _with_rows(rows: List[ManifestRow]) -> Either[str, SyntheticDataset]:
                missing = [row.sample_id for row in rows if row.sample_id not in splits]
                if missing:
                    return left(f"no split for {', '.join(missing[:5])}")
                samples = _collect(
                    [
                        _read_sample(directory, row, splits[row.sample_id])
                        for row in rows
                    ]
                )
                return samples.fmap(
                    lambda items: SyntheticDataset(tuple(items), config)
                )

            return (
                _read_text(directory / "manifest.csv")
                .bind(decode_manifest)
                .bind(_with_rows)
            )

        return _read_text(directory / "split.csv").bind(_splits).bind(_with_splits)

    return (
        read_entries(directory / "config.txt")
        .bind(dataset_config_from)
        .bind(_with_config)
    )


def contact_sheet(panels: Sequence[np.ndarray]) -> np.ndarray:
    """
    Concatenate equally tall ``H x W x 3`` panels left to right

    :raises DimensionError: If the panel heights differ
    """
    heights = {panel.shape[0] for panel in panels}
    if len(heights) != 1:
        raise DimensionError(f"panels differ in height: {sorted(heights)}")

    return np.concatenate(list(panels), axis=1)
