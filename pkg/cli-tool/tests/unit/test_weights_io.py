#!/usr/bin/env python3
"""
Test Suite for the Weights Container and Checkpoints
"""

import shutil
import tempfile
import unittest
from collections import OrderedDict
from pathlib import Path

import numpy as np

from src.core.losses import LossConfig
from src.model.std_model import ModelConfig, StdModel
from src.model.weights_io import HEADER, MAGIC, decode_weights, encode_weights, load_weights, save_weights
from src.training.checkpoint import load_checkpoint, model_config_from, read_manifest, save_checkpoint
from src.training.optimizer import TrainConfig
from src.utils.error_handling import CheckpointError, DetectorIOError, ExitCode


def tiny_config() -> ModelConfig:
    return ModelConfig(base_channels=4, fpn_width=8, fused_width=8, cpfsm_width=8)


class TestWeightsContainer(unittest.TestCase):
    """Test encoding and validation of .stdw files"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.state = OrderedDict([("conv.weight", rng.standard_normal((2, 3, 3, 3))),
                                  ("bn.running_var", np.ones(2))])

    def test_decoded_tensors(self):
        """Names, order, shapes and float32 values survive encoding"""
        state, manifest = decode_weights(encode_weights(self.state, extra={"step": 3}))
        self.assertEqual(list(state), ["conv.weight", "bn.running_var"])
        np.testing.assert_array_equal(state["conv.weight"], self.state["conv.weight"].astype(np.float32))
        self.assertEqual(manifest["extra"], {"step": 3})
        self.assertEqual(manifest["dtype"], "<f4")

    def test_byte_identical(self):
        """Identical weights give identical bytes"""
        self.assertEqual(encode_weights(self.state), encode_weights(OrderedDict(self.state)))

    def test_header_layout(self):
        """Magic, version and manifest length lead the file"""
        blob = encode_weights(self.state)
        magic, version, manifest_len = HEADER.unpack_from(blob, 0)
        self.assertEqual(magic, MAGIC)
        self.assertEqual(version, 1)
        self.assertEqual(len(blob), HEADER.size + manifest_len + 4 * (54 + 2))

    def test_bad_magic(self):
        """Foreign files are rejected"""
        blob = b"XXXX" + encode_weights(self.state)[4:]
        with self.assertRaises(CheckpointError):
            decode_weights(blob)

    def test_corrupted_payload(self):
        """A flipped payload byte fails the checksum"""
        blob = bytearray(encode_weights(self.state))
        blob[-1] ^= 0xFF
        with self.assertRaises(CheckpointError):
            decode_weights(bytes(blob))

    def test_truncated_file(self):
        """A file shorter than its header is rejected"""
        with self.assertRaises(CheckpointError):
            decode_weights(encode_weights(self.state)[:6])

    def test_checkpoint_error_is_io_failure(self):
        """Checkpoint problems exit with the I/O code"""
        self.assertEqual(CheckpointError("x").exit_code, ExitCode.IO_FAILURE)


class TestCheckpoint(unittest.TestCase):
    """Test checkpoint directories"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())
        self.model = StdModel(tiny_config(), seed=4)
        self.manifest_path = save_checkpoint(self.test_dir, self.model, TrainConfig(), LossConfig(), step=7,
                                             history=[{"step": 1, "total": 2.5}])

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def test_reload_reproduces_checksum(self):
        """The reloaded model carries the same parameters"""
        model, manifest = load_checkpoint(self.test_dir)
        self.assertEqual(model.checksum(), self.model.checksum())
        self.assertEqual(manifest["checksum"], self.model.checksum())
        self.assertEqual(manifest["step"], 7)
        self.assertEqual(manifest["loss_history"], [{"step": 1, "total": 2.5}])
        self.assertFalse(model.training)

    def test_architecture_comes_from_checkpoint(self):
        """A different fallback config does not override the stored widths"""
        model, _ = load_checkpoint(self.manifest_path, fallback=ModelConfig())
        self.assertEqual(model.config.base_channels, 4)

    def test_bare_weights_file(self):
        """The weights file alone carries its model section"""
        model, manifest = load_checkpoint(self.test_dir / "weights.stdw")
        self.assertEqual(manifest, {})
        self.assertEqual(model.checksum(), self.model.checksum())

    def test_weights_without_config(self):
        """Weights with no stored model section need a fallback"""
        path = self.test_dir / "bare.stdw"
        save_weights(path, self.model.state_dict())
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)
        model, _ = load_checkpoint(path, fallback=tiny_config())
        self.assertEqual(model.checksum(), self.model.checksum())

    def test_unknown_model_key(self):
        """Checkpoints from another model family are refused"""
        with self.assertRaises(CheckpointError):
            model_config_from({"base_channels": 4, "depth": 50})

    def test_not_a_manifest(self):
        """YAML without the checkpoint format tag is refused"""
        path = self.test_dir / "other.yaml"
        path.write_text("format: something-else\n")
        with self.assertRaises(CheckpointError):
            read_manifest(path)

    def test_missing_checkpoint(self):
        """A missing weights file is an I/O failure"""
        with self.assertRaises(DetectorIOError) as caught:
            load_weights(self.test_dir / "missing.stdw")
        self.assertEqual(caught.exception.exit_code, ExitCode.IO_FAILURE)


if __name__ == '__main__':
    unittest.main()
