#!/usr/bin/env python3
"""
Test Suite for Output File Names, Atomic Writes and Run Logging
"""

import json
import logging
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.config.file_paths import (
    annotation_for,
    get_all_output_paths,
    get_output_path,
    list_images,
    list_text_files,
    validate_output_consistency,
)
from src.utils.fileio import atomic_write_bytes, atomic_write_text, read_bytes
from src.utils.run_logger import RunLogger, history_step_recorder, to_json
from src.utils.error_handling import DetectorIOError


class TestFilePaths(unittest.TestCase):
    """Test canonical artifact names"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def test_named_outputs(self):
        """Fixed names and per-image patterns"""
        self.assertEqual(get_output_path("train", "weights"), "weights.stdw")
        self.assertEqual(get_output_path("infer", "detections", "img_7"), "img_7.txt")
        self.assertEqual(get_output_path("labelgen", "kernel_mask", "img_7"), "img_7_kernel.pgm")
        self.assertIn("report_json", get_all_output_paths("eval"))

    def test_unknown_names(self):
        """Unknown commands, types and missing stems raise KeyError"""
        with self.assertRaises(KeyError):
            get_output_path("deploy", "weights")
        with self.assertRaises(KeyError):
            get_output_path("train", "optimizer")
        with self.assertRaises(KeyError):
            get_output_path("infer", "detections")

    def test_names_are_unique(self):
        """No command maps two artifacts to one file"""
        self.assertEqual(validate_output_consistency(), [])

    def test_directory_listing(self):
        """Images are sorted and PNG only counts when enabled"""
        for name in ("b.ppm", "a.pgm", "c.png", "notes.md", "a.txt"):
            (self.test_dir / name).write_bytes(b"")
        self.assertEqual([p.name for p in list_images(self.test_dir)], ["a.pgm", "b.ppm"])
        self.assertEqual([p.name for p in list_images(self.test_dir, enable_png=True)],
                         ["a.pgm", "b.ppm", "c.png"])
        self.assertEqual([p.name for p in list_text_files(self.test_dir)], ["a.txt"])
        self.assertEqual(annotation_for(self.test_dir / "b.ppm", Path("gt")), Path("gt") / "b.txt")


class TestAtomicWrites(unittest.TestCase):
    """Test temp-file-and-rename writes"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def test_write_creates_parents_and_leaves_no_temp(self):
        """Nested directories are created and only the target remains"""
        target = self.test_dir / "a" / "b" / "out.bin"
        atomic_write_bytes(target, b"\x00\x01")
        self.assertEqual(read_bytes(target), b"\x00\x01")
        self.assertEqual(list(target.parent.iterdir()), [target])

    def test_overwrite(self):
        """A second write replaces the file"""
        target = self.test_dir / "note.txt"
        atomic_write_text(target, "first")
        atomic_write_text(target, "second")
        self.assertEqual(target.read_text(), "second")

    def test_read_missing(self):
        """Missing files map to DetectorIOError"""
        with self.assertRaises(DetectorIOError):
            read_bytes(self.test_dir / "missing")


class TestRunLogger(unittest.TestCase):
    """Test console, file and history logging"""

    def setUp(self):
        """Set up test environment"""
        self.test_dir = Path(tempfile.mkdtemp())
        self.run_logger = RunLogger(str(self.test_dir))

    def tearDown(self):
        """Clean up test environment"""
        for name in ("std_detector", "std_detector.history", "src"):
            logger = logging.getLogger(name)
            for handler in list(logger.handlers):
                handler.close()
                logger.removeHandler(handler)
        shutil.rmtree(self.test_dir)

    def test_log_files(self):
        """Operations reach the log file and the history channel"""
        self.run_logger.setup_logging(quiet=True)
        self.run_logger.log_operation("train", True, {"steps": np.int64(2)})
        logging.getLogger("src.training.trainer").info("step 1/2")
        history_step_recorder(1, {"total": np.float64(0.5)})

        log_text = (self.test_dir / "std-detector.log").read_text()
        self.assertIn("Operation train SUCCESS", log_text)
        self.assertIn("step 1/2", log_text)

        history = [json.loads(line.split(" - HISTORY - ", 1)[1])
                   for line in (self.test_dir / "history.log").read_text().splitlines()]
        self.assertEqual(history[0]["event"], "operation_train")
        self.assertEqual(history[1], {"event": "train_step", "details": {"total": 0.5, "step": 1}})

    def test_console_only(self):
        """to_file=False writes nothing to disk"""
        self.run_logger.setup_logging(to_file=False)
        self.run_logger.info("console message")
        self.assertEqual(list(self.test_dir.iterdir()), [])

    def test_json_encoding(self):
        """numpy values and paths serialize"""
        text = to_json({"a": np.arange(3), "b": np.float32(1.5), "c": Path("x/y")})
        self.assertEqual(json.loads(text), {"a": [0, 1, 2], "b": 1.5, "c": "x/y"})


if __name__ == '__main__':
    unittest.main()
