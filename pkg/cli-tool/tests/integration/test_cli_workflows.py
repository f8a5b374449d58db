#!/usr/bin/env python3
"""
CLI Workflow Integration Tests
Runs every subcommand end to end on tiny models and synthetic data:
labelgen, train, infer, eval, bench and verify, plus the exit-code
contract for bad configuration and missing files.
"""

import io
import json
import logging
import os
import shutil
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from unittest.mock import patch

import numpy as np
import yaml

# Add the cli-tool directory to the path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', '..'))

from cli import DetectorCLI
from src.config.run_config import RunConfig
from src.geometry.annotations import write_annotations, write_detection_file
from src.geometry.polygon import Polygon
from src.imageio.netpbm import Image, read_mask, write_image
from src.model.std_model import StdModel
from src.monitoring import oracle_suite

TINY = [
    "model.base_channels=4", "model.fpn_width=8", "model.fused_width=8", "model.cpfsm_width=8",
    "train.max_steps=2", "train.synthetic_count=1", "train.synthetic_size=64",
    "train.instances_per_image=1", "train.image_size=64", "train.log_every=1",
]

TEMPLATES = Path(__file__).resolve().parents[3] / "templates" / "configs"


def run_cli(argv, log_dir):
    """Run the CLI quietly with logs under log_dir; returns (exit code, stdout)"""
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        code = DetectorCLI().run(["--quiet", "--set", f"io.log_dir={log_dir}"] + list(argv))
    return code, buffer.getvalue()


def close_log_handlers():
    for name in ("std_detector", "std_detector.history", "src"):
        logger = logging.getLogger(name)
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)


def with_tiny(*extra):
    args = []
    for item in TINY + list(extra):
        args += ["--set", item]
    return args


class CLITestCase(unittest.TestCase):
    """Temporary workspace per test"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())
        self.log_dir = self.test_dir / "logs"

    def tearDown(self):
        """Clean up test environment"""
        close_log_handlers()
        shutil.rmtree(self.test_dir)

    def cli(self, *argv):
        return run_cli(argv, self.log_dir)


class TestLabelgenWorkflow(CLITestCase):
    """Test kernel label generation"""

    def setUp(self):
        super().setUp()
        self.images = self.test_dir / "images"
        self.annotations = self.test_dir / "annotations"
        for stem in ("img_1", "img_2", "img_3"):
            write_image(Image(np.full((64, 96, 3), 100, dtype=np.uint8)), self.images / f"{stem}.ppm")
        write_annotations(self.annotations / "img_1.txt", [Polygon.rectangle(8, 8, 88, 40)])
        write_annotations(self.annotations / "img_2.txt", [Polygon.rectangle(4, 4, 60, 30)],
                          dont_care=[Polygon.rectangle(70, 40, 90, 60)])
        write_annotations(self.annotations / "img_3.txt", [])

    def test_labels_and_summary(self):
        """Each image gets a kernel mask and the summary counts instances"""
        out_dir = self.test_dir / "labels"
        code, _ = self.cli("labelgen", str(self.annotations), str(self.images), str(out_dir))
        self.assertEqual(code, 0)

        for stem in ("img_1", "img_2", "img_3"):
            self.assertTrue((out_dir / f"{stem}_kernel.pgm").exists())
        self.assertEqual(int(read_mask(out_dir / "img_3_kernel.pgm").sum()), 0)
        self.assertGreater(int(read_mask(out_dir / "img_1_kernel.pgm").sum()), 0)

        summary = yaml.safe_load((out_dir / "labelgen_summary.yaml").read_text())
        self.assertEqual(summary["totals"], {"images": 3, "instances": 2, "collapsed": 0, "ignored": 1,
                                             "failed": 0})

    def test_missing_annotation_is_io_failure(self):
        """An image without annotations is reported and the run exits 2"""
        (self.annotations / "img_3.txt").unlink()
        out_dir = self.test_dir / "labels"
        code, _ = self.cli("labelgen", str(self.annotations), str(self.images), str(out_dir))
        self.assertEqual(code, 2)
        summary = yaml.safe_load((out_dir / "labelgen_summary.yaml").read_text())
        self.assertEqual(summary["totals"]["failed"], 1)
        self.assertEqual(summary["totals"]["images"], 2)


class TestTrainInferWorkflow(CLITestCase):
    """Test training, inference and their determinism"""

    def train(self, out_dir, *extra):
        return self.cli(*with_tiny(*extra), "train", "--synthetic", "--seed", "7", "--out", str(out_dir))

    def test_training_is_deterministic(self):
        """Two runs with the same seed write byte-identical weights"""
        first, second = self.test_dir / "run1", self.test_dir / "run2"
        self.assertEqual(self.train(first)[0], 0)
        self.assertEqual(self.train(second)[0], 0)
        self.assertEqual((first / "weights.stdw").read_bytes(), (second / "weights.stdw").read_bytes())

        manifest = yaml.safe_load((first / "checkpoint.yaml").read_text())
        self.assertEqual(manifest["step"], 2)
        self.assertEqual(len((first / "loss_curve.csv").read_text().splitlines()), 3)
        self.assertTrue((first / "effective.cfg").exists())
        self.assertTrue((first / "dataset" / "images" / "synth_0000.ppm").exists())

    def test_zero_epochs_keeps_initialization(self):
        """No steps leave the seeded initialization in the checkpoint"""
        out_dir = self.test_dir / "init"
        code, _ = self.cli(*with_tiny(), "train", "--synthetic", "--seed", "7", "--epochs", "0",
                           "--out", str(out_dir))
        self.assertEqual(code, 0)
        config = RunConfig.load(overrides=TINY)
        manifest = yaml.safe_load((out_dir / "checkpoint.yaml").read_text())
        self.assertEqual(manifest["step"], 0)
        self.assertEqual(manifest["checksum"], StdModel(config.model, seed=7).checksum())

    def test_zero_epochs_overrides_step_budget_of_template(self):
        """--epochs 0 wins over the 2000-step budget of the toy overfit template"""
        template = TEMPLATES / "toy_overfit.cfg"
        out_dir = self.test_dir / "toy_init"
        code, _ = self.cli("--config", str(template), "train", "--synthetic", "--seed", "7", "--epochs", "0",
                           "--out", str(out_dir))
        self.assertEqual(code, 0)
        config = RunConfig.load(str(template))
        self.assertEqual(config.train.max_steps, 2000)
        manifest = yaml.safe_load((out_dir / "checkpoint.yaml").read_text())
        self.assertEqual(manifest["step"], 0)
        self.assertEqual(manifest["checksum"], StdModel(config.model, seed=7).checksum())
        self.assertEqual(len((out_dir / "loss_curve.csv").read_text().splitlines()), 1)

    def test_inference_is_deterministic(self):
        """Detections are identical across runs and overlays are written on request"""
        run_dir = self.test_dir / "run"
        self.assertEqual(self.train(run_dir)[0], 0)
        images = run_dir / "dataset" / "images"

        first, second = self.test_dir / "dets1", self.test_dir / "dets2"
        code, output = self.cli("--json", "infer", str(run_dir), str(images), str(first), "--overlay")
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(output)["mask"], "refined")
        self.assertEqual(self.cli("infer", str(run_dir), str(images), str(second), "--overlay")[0], 0)

        self.assertEqual((first / "synth_0000.txt").read_text(), (second / "synth_0000.txt").read_text())
        self.assertTrue((first / "synth_0000_overlay.ppm").exists())

    def test_coarse_mask_inference(self):
        """--mask coarse runs post-processing on the upsampled coarse map"""
        run_dir = self.test_dir / "run"
        self.assertEqual(self.train(run_dir)[0], 0)
        code, _ = self.cli("infer", str(run_dir / "weights.stdw"), str(run_dir / "dataset" / "images"),
                           str(self.test_dir / "coarse"), "--mask", "coarse")
        self.assertEqual(code, 0)
        self.assertTrue((self.test_dir / "coarse" / "synth_0000.txt").exists())


class TestEvalWorkflow(CLITestCase):
    """Test evaluation reports"""

    def setUp(self):
        super().setUp()
        self.gt_dir = self.test_dir / "gt"
        self.det_dir = self.test_dir / "det"
        self.boxes = [Polygon.rectangle(10 * i, 0, 10 * i + 8, 8) for i in range(10)]
        write_annotations(self.gt_dir / "img_1.txt", self.boxes[:5], dont_care=[Polygon.rectangle(0, 50, 20, 70)])
        write_annotations(self.gt_dir / "img_2.txt", self.boxes[5:])

    def test_perfect_detections(self):
        """Detections equal to the ground truth score F = 1"""
        write_detection_file(self.det_dir / "img_1.txt", [(0.9, b) for b in self.boxes[:5]] +
                             [(0.8, Polygon.rectangle(2, 52, 18, 68))])
        write_detection_file(self.det_dir / "img_2.txt", [(0.9, b) for b in self.boxes[5:]])
        out_dir = self.test_dir / "eval"
        code, _ = self.cli("eval", str(self.det_dir), str(self.gt_dir), "--out", str(out_dir))
        self.assertEqual(code, 0)
        report = json.loads((out_dir / "report.json").read_text())
        self.assertEqual(report["summary"]["f_measure"], 1.0)
        self.assertEqual(report["images"][0]["discarded"], [5])
        self.assertIn("f_measure: 1.0", (out_dir / "report.txt").read_text())

    def test_one_miss(self):
        """Nine of ten found gives recall 0.9 and precision 1"""
        write_detection_file(self.det_dir / "img_1.txt", [(0.9, b) for b in self.boxes[:4]])
        write_detection_file(self.det_dir / "img_2.txt", [(0.9, b) for b in self.boxes[5:]])
        code, output = self.cli("--json", "eval", str(self.det_dir), str(self.gt_dir), "--out",
                                str(self.test_dir / "eval"))
        self.assertEqual(code, 0)
        summary = json.loads(output)["summary"]
        self.assertEqual(summary["precision"], 1.0)
        self.assertEqual(summary["recall"], 0.9)

    def test_coarse_comparison(self):
        """--coarse-dir adds refined-minus-coarse deltas"""
        write_detection_file(self.det_dir / "img_1.txt", [(0.9, b) for b in self.boxes[:5]])
        write_detection_file(self.det_dir / "img_2.txt", [(0.9, b) for b in self.boxes[5:]])
        coarse_dir = self.test_dir / "coarse"
        write_detection_file(coarse_dir / "img_1.txt", [])
        write_detection_file(coarse_dir / "img_2.txt", [])
        code, output = self.cli("--json", "eval", str(self.det_dir), str(self.gt_dir), "--out",
                                str(self.test_dir / "eval"), "--coarse-dir", str(coarse_dir))
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(output)["comparison"]["delta_f_measure"], 1.0)

    def test_unmatched_files(self):
        """A ground-truth file without detections fails validation"""
        write_detection_file(self.det_dir / "img_1.txt", [(0.9, b) for b in self.boxes[:5]])
        code, output = self.cli("--json", "eval", str(self.det_dir), str(self.gt_dir), "--out",
                                str(self.test_dir / "eval"))
        self.assertEqual(code, 1)
        self.assertEqual(len(json.loads(output)["unmatched"]), 1)


class TestBenchVerifyWorkflow(CLITestCase):
    """Test benchmarking and the oracle suite"""

    def test_bench(self):
        """bench writes timing and per-block cost"""
        out_dir = self.test_dir / "bench"
        code, _ = self.cli(*with_tiny(), "bench", "--size", "64", "--iters", "1", "--warmup", "0",
                           "--out", str(out_dir))
        self.assertEqual(code, 0)
        payload = json.loads((out_dir / "bench.json").read_text())
        self.assertEqual(payload["timing"]["iterations"], 1)
        self.assertEqual(payload["input_size"], [64, 64])
        self.assertEqual(payload["blocks"]["alpha"]["params"], 1)
        self.assertGreater(payload["blocks"]["total"]["macs"], 0)

    def test_verify_selected_checks(self):
        """Selected oracles pass"""
        code, output = self.cli("--json", "verify", "--only", "f_measure_arithmetic", "--only", "miem_macs")
        self.assertEqual(code, 0)
        payload = json.loads(output)
        self.assertTrue(payload["passed"])
        self.assertEqual(len(payload["checks"]), 2)

    def test_verify_sample_defaults(self):
        """verify defaults to 20 gradient trials, 100 shape sizes and 500 rectangles"""
        args = DetectorCLI().create_parser().parse_args(["verify"])
        self.assertEqual((args.trials, args.shape_trials, args.round_trip_samples), (20, 100, 500))
        suite = oracle_suite.OracleSuite()
        self.assertEqual((suite.trials, suite.shape_trials, suite.round_trip_samples), (20, 100, 500))

    def test_verify_shape_trials_flag(self):
        """--shape-trials sets the number of random input sizes"""
        with patch.object(oracle_suite, "shape_contract_trials", return_value=[((32, 32), True)]) as trials:
            code, output = self.cli("--json", "verify", "--only", "shape_contracts", "--shape-trials", "3")
        self.assertEqual(code, 0)
        self.assertEqual(trials.call_args[0][0], 3)
        self.assertEqual(json.loads(output)["checks"][0]["detail"], "1/1 random sizes")

    def test_verify_failure_exit_code(self):
        """A failing oracle exits 1"""
        with patch.object(oracle_suite, "F_TOLERANCE", -1.0):
            code, _ = self.cli("verify", "--only", "f_measure_arithmetic")
        self.assertEqual(code, 1)


class TestExitCodes(CLITestCase):
    """Test the exit-code contract"""

    def test_invalid_config_value(self):
        """gamma outside (0, 1) is a validation failure"""
        code, _ = self.cli("--set", "model.gamma=2", "verify", "--only", "miem_macs")
        self.assertEqual(code, 1)

    def test_unknown_config_key(self):
        """Misspelled keys are a validation failure"""
        code, _ = self.cli("--set", "model.gama=0.4", "verify", "--only", "miem_macs")
        self.assertEqual(code, 1)

    def test_missing_checkpoint(self):
        """Inference with a missing checkpoint is an I/O failure"""
        images = self.test_dir / "images"
        write_image(Image(np.zeros((32, 32, 3), dtype=np.uint8)), images / "a.ppm")
        code, _ = self.cli("infer", str(self.test_dir / "nowhere"), str(images), str(self.test_dir / "out"))
        self.assertEqual(code, 2)

    def test_missing_config_file(self):
        """An unreadable --config file is an I/O failure"""
        code, _ = self.cli("--config", str(self.test_dir / "missing.cfg"), "verify", "--only", "miem_macs")
        self.assertEqual(code, 2)


if __name__ == '__main__':
    unittest.main()
