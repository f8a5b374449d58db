#!/usr/bin/env python3
"""
Test Suite for the Training Loop
Tests scheduling, flips, zero learning rate, checkpoints, divergence
handling and seeded determinism on a tiny model.
"""

import dataclasses
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from src.core import functional as F
from src.core.losses import LossConfig, total_loss
from src.geometry.polygon import Polygon
from src.imageio.netpbm import Image
from src.model.std_model import ModelConfig, StdModel
from src.training.checkpoint import load_checkpoint
from src.training.optimizer import TrainConfig
from src.training.synthetic import synth_dataset
from src.training.trainer import (
    CSV_COLUMNS,
    Trainer,
    TrainingSample,
    flip_sample,
    from_synthetic,
    train,
)
from src.utils.error_handling import DivergenceError, NumericalError

MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)


def tiny_model(seed: int = 0) -> StdModel:
    return StdModel(ModelConfig(base_channels=4, fpn_width=8, fused_width=8, cpfsm_width=8), seed=seed)


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(max_steps=2, image_size=64, log_every=0, seed=7)
    values.update(overrides)
    return TrainConfig(**values)


class TestSamples(unittest.TestCase):
    """Test sample preparation"""

    def test_flip_mirrors_polygons(self):
        """x maps to width - x and the image columns reverse"""
        data = np.zeros((16, 64, 3), dtype=np.uint8)
        data[:, 0] = 255
        sample = TrainingSample(name="s", image=Image(data), polygons=[Polygon.rectangle(4, 4, 20, 10)],
                                dont_care=[np.array([[0, 0], [8, 0], [8, 8], [0, 8]], dtype=np.float64)])
        flipped = flip_sample(sample)
        self.assertEqual(flipped.polygons[0].bounds, (44.0, 4.0, 60.0, 10.0))
        self.assertEqual(flipped.image.data[0, 63, 0], 255)
        self.assertEqual(float(flipped.dont_care[0][:, 0].min()), 56.0)
        self.assertGreater(flipped.polygons[0].area, 0.0)


class TestTrainer(unittest.TestCase):
    """Test the loop on synthetic data"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())
        self.samples = from_synthetic(synth_dataset(0, 2, 64, 1))

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def test_schedule(self):
        """Every step gets one batch, the order is seeded and flips can be disabled"""
        trainer = Trainer(tiny_model(), self.samples, tiny_train_config(max_steps=5), LossConfig(), MEAN, STD)
        schedule = trainer.schedule()
        self.assertEqual(len(schedule), 5)
        self.assertEqual(schedule, Trainer(tiny_model(), self.samples, tiny_train_config(max_steps=5),
                                           LossConfig(), MEAN, STD).schedule())
        no_flip = Trainer(tiny_model(), self.samples, tiny_train_config(max_steps=5, flip=False), LossConfig(),
                          MEAN, STD).schedule()
        self.assertFalse(any(flipped for batch in no_flip for _, flipped in batch))

    def test_total_steps_from_epochs(self):
        """Without max_steps the loop runs epochs * batches"""
        cfg = tiny_train_config(max_steps=0, epochs=3, batch_size=1)
        self.assertEqual(Trainer(tiny_model(), self.samples, cfg, LossConfig(), MEAN, STD).total_steps(), 6)

    def test_zero_learning_rate_keeps_parameters(self):
        """lr = 0 moves no parameter"""
        model = tiny_model()
        before = {name: t.data.copy() for name, t in model.named_parameters()}
        result = train(model, self.samples, tiny_train_config(base_lr=0.0), LossConfig(), MEAN, STD)
        self.assertEqual(result.steps, 2)
        for name, t in model.named_parameters():
            np.testing.assert_array_equal(t.data, before[name], err_msg=name)

    def test_zero_steps_checkpoints_initialization(self):
        """epochs 0 writes the untouched model"""
        model = tiny_model(seed=3)
        initial = model.checksum()
        result = train(model, self.samples, tiny_train_config(max_steps=0, epochs=0), LossConfig(), MEAN, STD,
                       out_dir=self.test_dir)
        self.assertEqual(result.steps, 0)
        self.assertEqual(result.history, [])
        self.assertEqual(result.checksum, initial)
        reloaded, manifest = load_checkpoint(self.test_dir)
        self.assertEqual(reloaded.checksum(), initial)
        self.assertEqual(manifest["step"], 0)

    def test_loss_records_and_curve(self):
        """Each step records finite losses and the CSV mirrors the history"""
        result = train(tiny_model(), self.samples, tiny_train_config(), LossConfig(), MEAN, STD,
                       out_dir=self.test_dir)
        self.assertEqual([r.step for r in result.history], [1, 2])
        self.assertTrue(all(np.isfinite(r.total) for r in result.history))
        self.assertIsNotNone(result.history[0].alpha)

        lines = (self.test_dir / "loss_curve.csv").read_text().splitlines()
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        self.assertEqual(len(lines), 3)

    def test_same_seed_same_weights(self):
        """Two runs with the same seed end bit-identical"""
        first = train(tiny_model(), self.samples, tiny_train_config(), LossConfig(), MEAN, STD)
        second = train(tiny_model(), self.samples, tiny_train_config(), LossConfig(), MEAN, STD)
        self.assertEqual(first.checksum, second.checksum)
        self.assertEqual([r.total for r in first.history], [r.total for r in second.history])

    def test_divergence_saves_last_good_state(self):
        """A numerical failure stops training with the step and a checkpoint"""
        model = tiny_model()
        initial = model.checksum()
        with patch.object(Trainer, "train_step", side_effect=NumericalError("Non-finite loss nan")):
            with self.assertRaises(DivergenceError) as caught:
                train(model, self.samples, tiny_train_config(), LossConfig(), MEAN, STD, out_dir=self.test_dir)
        self.assertEqual(caught.exception.step, 1)
        self.assertTrue(Path(caught.exception.last_good_checkpoint).exists())
        reloaded, _ = load_checkpoint(self.test_dir)
        self.assertEqual(reloaded.checksum(), initial)

    def test_divergence_rolls_back_batch_norm_statistics(self):
        """A forward pass that ends in a NaN loss leaves no trace in the running statistics"""
        model = tiny_model()
        initial = model.checksum()
        before = {name: buffer.copy() for name, buffer in model.named_buffers()}

        def nan_loss(*args, **kwargs):
            losses = total_loss(*args, **kwargs)
            return dataclasses.replace(losses, total=F.scale(losses.total, float("nan")))

        with patch("src.training.trainer.total_loss", side_effect=nan_loss) as patched:
            with self.assertRaises(DivergenceError):
                train(model, self.samples, tiny_train_config(), LossConfig(), MEAN, STD, out_dir=self.test_dir)
        self.assertEqual(patched.call_count, 1)
        for name, buffer in model.named_buffers():
            np.testing.assert_array_equal(buffer, before[name], err_msg=name)
        reloaded, _ = load_checkpoint(self.test_dir)
        self.assertEqual(reloaded.checksum(), initial)


if __name__ == '__main__':
    unittest.main()
