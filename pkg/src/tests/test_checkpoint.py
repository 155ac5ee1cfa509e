# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

# pylint: disable=missing-module-docstring
# pylint: disable=missing-class-docstring
# pylint: disable=missing-function-docstring
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from typing import Dict

import numpy as np

from spooftrace.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_networks,
    save_checkpoint,
)
from spooftrace.codec import pack_arrays, unpack_arrays
from spooftrace.train import TrainState, fit
from tests.fixtures import TINY_MODEL, tiny_config, tiny_faces


class TestCheckpoint(unittest.TestCase):
    def test_decoded_checkpoint_encodes_to_the_same_bytes(self):
        # arrange
        config = tiny_config(total_iters=2)
        live, spoof = tiny_faces()
        state = fit(TrainState.initial(config), live, spoof, config)
        blob = encode_checkpoint(state)

        # act
        restored = decode_checkpoint(blob)

        # assert
        self.assertTrue(restored.is_right())
        self.assertEqual(blob, encode_checkpoint(restored.value))
        self.assertEqual(2, restored.value.iteration)
        self.assertEqual(
            state.networks.generator.config, restored.value.networks.generator.config
        )

    def test_resumed_run_matches_the_uninterrupted_run_bit_for_bit(self):
        # arrange
        config = tiny_config(total_iters=4, checkpoint_every=2)
        live, spoof = tiny_faces()
        taken: Dict[int, bytes] = {}

        # act
        uninterrupted = fit(
            TrainState.initial(config),
            live,
            spoof,
            config,
            on_checkpoint=lambda state: taken.setdefault(
                state.iteration, encode_checkpoint(state)
            ),
        )
        resumed = fit(decode_checkpoint(taken[2]).value, live, spoof, config)

        # assert
        self.assertEqual(encode_checkpoint(uninterrupted), encode_checkpoint(resumed))

    def test_same_seed_gives_identical_checkpoints(self):
        # arrange
        config = tiny_config(total_iters=2)
        live, spoof = tiny_faces()

        # act
        first = encode_checkpoint(fit(TrainState.initial(config), live, spoof, config))
        second = encode_checkpoint(fit(TrainState.initial(config), live, spoof, config))
        reseeded = TrainState.initial(replace(config, seed=8))
        other = encode_checkpoint(fit(reseeded, live, spoof, config))

        # assert
        self.assertEqual(first, second)
        self.assertNotEqual(first, other)

    def test_save_and_load_through_the_file_system(self):
        # arrange
        state = TrainState.initial(tiny_config())

        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "nested" / "checkpoint.ckpt"

            # act
            save_checkpoint(state, path)
            loaded = load_checkpoint(path)
            networks = load_networks(path)

        # assert
        self.assertTrue(loaded.is_right())
        self.assertTrue(networks.is_right())
        for a, b in zip(
            state.networks.generator.parameters(),
            networks.value.generator.parameters(),
        ):
            np.testing.assert_array_equal(a.data, b.data)

    def test_missing_file_is_reported(self):
        # act
        loaded = load_checkpoint(Path(tempfile.gettempdir()) / "does-not-exist.ckpt")

        # assert
        self.assertTrue(loaded.is_left())
        self.assertIn("cannot read checkpoint", loaded.value)

    def test_corrupt_checkpoints_are_reported(self):
        # arrange
        blob = encode_checkpoint(TrainState.initial(tiny_config()))
        header, arrays = unpack_arrays(MAGIC, blob).value
        other_model = replace(TINY_MODEL, esr_width=8)
        model = dict(header["model"], esr_width=other_model.esr_width)
        mismatched = pack_arrays(MAGIC, dict(header, model=model), arrays)
        headless = pack_arrays(
            MAGIC, {key: value for key, value in header.items() if key != "rng"}, arrays
        )
        seedless = pack_arrays(
            MAGIC,
            {key: value for key, value in header.items() if key != "seed"},
            arrays,
        )

        # act
        results = [
            decode_checkpoint(b"not a checkpoint"),
            decode_checkpoint(blob[:-8]),
            decode_checkpoint(blob + b"\x00" * 8),
            decode_checkpoint(mismatched),
            decode_checkpoint(headless),
            decode_checkpoint(seedless),
        ]

        # assert
        self.assertTrue(all(result.is_left() for result in results))
        self.assertIn("rng", results[4].value)
        self.assertIn("seed", results[5].value)

    def test_checkpoint_keeps_the_run_seed(self):
        # arrange
        config = tiny_config(seed=11)
        state = TrainState.initial(config)

        # act
        restored = decode_checkpoint(encode_checkpoint(state))

        # assert
        self.assertTrue(restored.is_right())
        self.assertEqual(11, restored.value.seed)
