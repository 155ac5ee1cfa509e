# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Cli - The ``spooftrace`` command: ``gendata``, ``train``, ``eval``,
``disentangle`` and ``synthesize``.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure, 4 domain
error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from pyella.either import Either, either, left, pure

from spooftrace.checkpoint import load_checkpoint, load_networks, save_checkpoint
from spooftrace.codec import (
    contact_sheet,
    encode_report_json,
    encode_report_text,
    encode_scores,
    read_dataset,
    read_landmarks,
    read_ppm,
    write_dataset,
    write_ppm,
)
from spooftrace.config import (
    Entries,
    dataset_config_from,
    format_config,
    read_entries,
    train_config_from,
)
from spooftrace.errors import (
    DegenerateGeometryError,
    DimensionError,
    DomainError,
    NumericError,
    StatisticsError,
)
from spooftrace.evaluation import (
    Label,
    ScoreRecord,
    calibrate_alpha0,
    calibration_sweep,
    compare_media_classifiers,
    disentangle,
    disentanglement_panels,
    roc_metrics,
    score_terms,
)
from spooftrace.models import BatchNormMode, Networks, generator_forward
from spooftrace.synthdata import Split, SyntheticDataset, gen_dataset
from spooftrace.tensor import Tensor
from spooftrace.train import FaceSet, TrainConfig, TrainingLog, TrainState, fit
from spooftrace.trace import compose, synthesize_spoof, trace_display
from spooftrace.warp3d import LandmarkSet

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = (
    "%(asctime)s [%(levelname)8s] %(name)s: %(message)s (%(filename)s:%(lineno)s)"
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DOMAIN = 4


def _fail(message: str) -> int:
    print(f"spooftrace: error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _config_entries(
    path: Optional[Path], flags: Dict[str, object]
) -> Either[str, Entries]:
    "File entries overridden by the flags that were given"
    base: Either[str, Entries] = read_entries(path) if path is not None else pure({})
    given = {key: str(value) for key, value in flags.items() if value is not None}

    return base.fmap(lambda entries: {**entries, **given})


def _load_dataset(directory: Path) -> Either[str, SyntheticDataset]:
    if not directory.is_dir():
        return left(f"dataset directory {directory} does not exist")
    return read_dataset(directory)


def cmd_gendata(args: argparse.Namespace) -> int:
    "Generate a synthetic dataset and export it"
    flags = {
        "n_live": args.n_live,
        "n_spoof": args.n_spoof,
        "seed": args.seed,
        "image_size": args.size,
    }

    def _run(config) -> int:
        write_dataset(gen_dataset(config), args.out)
        return EXIT_OK

    return either(
        _fail, _run, _config_entries(args.config, flags).bind(dataset_config_from)
    )


def _train_config(args: argparse.Namespace) -> Either[str, TrainConfig]:
    flags = {"seed": args.seed, "total_iters": args.iters, "image_size": args.size}
    return _config_entries(args.config, flags).bind(train_config_from)


def _initial_state(
    args: argparse.Namespace, config: TrainConfig
) -> Either[str, TrainState]:
    if args.checkpoint is None:
        return pure(TrainState.initial(config))

    def _check(state: TrainState) -> Either[str, TrainState]:
        if state.networks.generator.config != config.model_config():
            return left("checkpoint was written for a different model configuration")
        if state.seed != config.seed:
            return left(
                f"checkpoint was written with seed {state.seed}, "
                f"the configuration has seed {config.seed}"
            )
        return pure(state)

    return load_checkpoint(args.checkpoint).bind(_check)


def cmd_train(args: argparse.Namespace) -> int:
    """
    Train on the train split of a dataset, writing the log and checkpoints to
    ``--out``
    """

    def _with_config(config: TrainConfig) -> int:
        if args.dry_run:
            sys.stdout.write(format_config(config))
            return EXIT_OK
        return either(
            _fail, lambda data: _with_data(config, data), _load_dataset(args.data)
        )

    def _with_data(config: TrainConfig, dataset: SyntheticDataset) -> int:
        if dataset.config.image_size != config.image_size:
            return _fail(
                f"dataset images are {dataset.config.image_size}px, "
                f"config expects {config.image_size}px"
            )
        live = FaceSet.of(dataset.live(Split.TRAIN))
        spoof = FaceSet.of(dataset.spoof(Split.TRAIN))
        return either(
            _fail,
            lambda state: _run(config, live, spoof, state),
            _initial_state(args, config),
        )

    def _run(
        config: TrainConfig, live: FaceSet, spoof: FaceSet, state: TrainState
    ) -> int:
        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(config), encoding="utf-8")
        log = TrainingLog.open(out / "train_log.csv", resume_from=state.iteration)

        def _checkpoint(current: TrainState) -> None:
            save_checkpoint(
                current, out / "checkpoints" / f"iter_{current.iteration:06d}.ckpt"
            )
            save_checkpoint(current, out / "checkpoint.ckpt")

        fit(state, live, spoof, config, log, _checkpoint)
        return EXIT_OK

    return either(_fail, _with_config, _train_config(args))


def _records(dataset_samples, networks: Networks):
    if not dataset_samples:
        raise DomainError("the dataset split is empty")
    images = np.stack([sample.image for sample in dataset_samples])
    labels = [
        Label.LIVE if sample.is_live else Label.SPOOF for sample in dataset_samples
    ]
    maps, traces = disentangle(networks, images)

    return score_terms(maps, traces, labels), traces, images


def cmd_eval(args: argparse.Namespace) -> int:
    """
    Calibrate ``alpha0`` on the train split, score the test split and write
    ``scores.csv``, ``report.txt`` and ``report.json``
    """

    def _run(networks: Networks, dataset: SyntheticDataset) -> int:
        validation, _, _ = _records(dataset.split(Split.TRAIN), networks)
        test_samples = dataset.split(Split.TEST)
        sweep = calibration_sweep(validation)
        alpha0 = calibrate_alpha0(validation)
        terms, traces, images = _records(test_samples, networks)
        records = [
            ScoreRecord(term.score(alpha0), term.label, sample.medium, sample.sample_id)
            for term, sample in zip(terms, test_samples)
        ]
        report = roc_metrics(records)

        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text(encode_scores(records), encoding="utf-8")
        text = encode_report_text(report, alpha0, sweep)
        if args.media:
            spoof = [
                index for index, sample in enumerate(test_samples) if not sample.is_live
            ]
            media = [test_samples[index].medium.from_maybe("") for index in spoof]
            on_traces, on_images = compare_media_classifiers(
                traces[spoof], images[spoof], media
            )
            text += f"\nmedium accuracy (traces)     {on_traces.accuracy:.4%}\n"
            text += f"medium accuracy (raw images) {on_images.accuracy:.4%}\n"
        (out / "report.txt").write_text(text, encoding="utf-8")
        (out / "report.json").write_text(
            encode_report_json(report, alpha0), encoding="utf-8"
        )
        LOGGER.info("EER %.4f at alpha0 %.4g", report.eer, alpha0)
        return EXIT_OK

    return either(
        _fail,
        lambda pair: _run(*pair),
        load_networks(args.checkpoint).bind(
            lambda networks: _load_dataset(args.data).fmap(
                lambda dataset: (networks, dataset)
            )
        ),
    )


def _face(image_path: Path, landmarks_path: Optional[Path]) -> Either[str, tuple]:
    def _with_image(image: np.ndarray) -> Either[str, tuple]:
        if landmarks_path is None:
            return pure((image, None))

        def _fits(landmarks: LandmarkSet) -> Either[str, tuple]:
            if not landmarks.fits(image.shape[0]):
                return left(f"{landmarks_path}: landmarks lie outside the image")
            return pure((image, landmarks))

        return read_landmarks(landmarks_path).bind(_fits)

    return read_ppm(image_path).bind(_with_image)


def cmd_disentangle(args: argparse.Namespace) -> int:
    "Write the six disentanglement panels and a contact sheet of them"

    def _run(networks: Networks, image: np.ndarray) -> int:
        panels = disentanglement_panels(networks, image)
        for name, panel in panels:
            write_ppm(args.out / f"{name}.ppm", panel)
        write_ppm(args.out / "sheet.ppm", contact_sheet([panel for _, panel in panels]))
        return EXIT_OK

    return either(
        _fail,
        lambda pair: _run(*pair),
        load_networks(args.checkpoint).bind(
            lambda networks: _face(args.image, args.landmarks).fmap(
                lambda face: (networks, face[0])
            )
        ),
    )


def trace_of(networks: Networks, image: np.ndarray) -> Tensor:
    "The composed trace ``G(I)`` of one face, ``N x N x 3``"
    batch = Tensor(image[None])
    elements = generator_forward(
        networks.generator, batch, BatchNormMode.INFERENCE
    ).elements

    return compose(elements, batch)[0]


def cmd_synthesize(args: argparse.Namespace) -> int:
    "Move the trace of the source spoof onto the target live face"

    def _run(networks: Networks, source: tuple, target: tuple) -> int:
        source_image, source_landmarks = source
        target_image, target_landmarks = target
        synthesized = synthesize_spoof(
            target_image,
            target_landmarks,
            trace_of(networks, source_image),
            source_landmarks,
        )
        write_ppm(
            args.out / "warped_trace.ppm", trace_display(synthesized.warped_trace)
        )
        write_ppm(args.out / "synthesized.ppm", synthesized.image.data)
        return EXIT_OK

    loaded = load_networks(args.checkpoint).bind(
        lambda networks: _face(args.source_image, args.source_landmarks).bind(
            lambda source: _face(args.target_image, args.target_landmarks).fmap(
                lambda target: (networks, source, target)
            )
        )
    )

    return either(_fail, lambda triple: _run(*triple), loaded)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spooftrace", description="Spoof trace disentanglement"
    )
    parser.add_argument("--verbose", action="store_true", help="log at debug level")
    commands = parser.add_subparsers(dest="command", required=True)

    gendata = commands.add_parser("gendata", help="generate a synthetic dataset")
    gendata.add_argument("--out", type=Path, required=True)
    gendata.add_argument("--config", type=Path)
    gendata.add_argument("--seed", type=int)
    gendata.add_argument("--n-live", type=int)
    gendata.add_argument("--n-spoof", type=int)
    gendata.add_argument("--size", type=int)
    gendata.set_defaults(handler=cmd_gendata)

    train = commands.add_parser("train", help="train generator and discriminators")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--config", type=Path)
    train.add_argument("--seed", type=int)
    train.add_argument("--iters", type=int)
    train.add_argument("--size", type=int)
    train.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    train.add_argument(
        "--dry-run", action="store_true", help="validate and print the config"
    )
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser(
        "eval", help="score the test split and report metrics"
    )
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.add_argument(
        "--media", action="store_true", help="also classify spoof media"
    )
    evaluate.set_defaults(handler=cmd_eval)

    disentangle_ = commands.add_parser(
        "disentangle", help="visualize the trace of one face"
    )
    disentangle_.add_argument("--image", type=Path, required=True)
    disentangle_.add_argument("--landmarks", type=Path)
    disentangle_.add_argument("--checkpoint", type=Path, required=True)
    disentangle_.add_argument("--out", type=Path, required=True)
    disentangle_.set_defaults(handler=cmd_disentangle)

    synthesize = commands.add_parser(
        "synthesize", help="plant a spoof trace onto a live face"
    )
    synthesize.add_argument("--source-image", type=Path, required=True)
    synthesize.add_argument("--source-landmarks", type=Path, required=True)
    synthesize.add_argument("--target-image", type=Path, required=True)
    synthesize.add_argument("--target-landmarks", type=Path, required=True)
    synthesize.add_argument("--checkpoint", type=Path, required=True)
    synthesize.add_argument("--out", type=Path, required=True)
    synthesize.set_defaults(handler=cmd_synthesize)

    return parser


def _guarded(
    handler: Callable[[argparse.Namespace], int], args: argparse.Namespace
) -> int:
    try:
        return handler(args)
    except NumericError as error:
        LOGGER.error("%s", error)
        print(f"spooftrace: numeric failure: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as error:
        print(f"spooftrace: domain error: {error}", file=sys.stderr)
        return EXIT_DOMAIN
    except (DimensionError, DegenerateGeometryError, StatisticsError, OSError) as error:
        return _fail(str(error))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line

    :return: The exit code
    """
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT
    )

    return _guarded(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
