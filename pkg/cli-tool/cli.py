#!/usr/bin/env python3
"""
Scene Text Detector CLI Tool

Main entry point tying the pipeline together: kernel label generation,
training, inference, evaluation, benchmarking and self-verification.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from src.config.file_paths import (
    annotation_for,
    get_output_path,
    list_images,
    list_text_files,
)
from src.config.run_config import MASK_CHOICES, RunConfig
from src.core.tensor import precision
from src.evaluation.flops import count_flops_params, format_cost_table
from src.evaluation.metrics import EvalReport, compare_reports, match_detections
from src.evaluation.timing import timing_harness
from src.geometry.annotations import read_annotations, read_detection_file, split_instances, write_detection_file
from src.geometry.labels import make_kernel_label
from src.imageio.netpbm import read_image, write_image, write_mask
from src.imageio.overlay import draw_overlay
from src.imageio.transforms import image_to_input
from src.model.std_model import StdModel
from src.monitoring.oracle_suite import (GRADIENT_TRIALS, ROUND_TRIP_SAMPLES, SHAPE_TRIALS, OracleSuite,
                                         format_results)
from src.postprocess.detector import PostprocessParams
from src.postprocess.inference import detect_from_model, infer_image
from src.training.checkpoint import load_checkpoint
from src.training.synthetic import synth_dataset, write_dataset
from src.training.trainer import from_synthetic, load_dataset, train
from src.utils.error_handling import (
    ConfigError,
    DetectorError,
    ErrorContext,
    ErrorHandler,
    ExitCode,
    VerificationError,
)
from src.utils.fileio import atomic_write_text
from src.utils.run_logger import RunLogger, to_json


class DetectorCLI:
    """Main CLI application class"""

    def __init__(self):
        self.logger = RunLogger()
        self.error_handler = ErrorHandler(logging.getLogger('std_detector'))
        self.config: Optional[RunConfig] = None

    def setup_logging(self, verbose: bool = False, quiet: bool = False, log_dir: Optional[str] = None):
        """Setup logging configuration"""
        if log_dir:
            self.logger = RunLogger(log_dir)
        self.logger.setup_logging(logging.INFO, quiet=quiet, verbose=verbose)

    def load_config(self, args) -> RunConfig:
        """Defaults, then --config, then --set, then the dedicated flags"""
        config = RunConfig.load(args.config, args.overrides)
        flag_keys = {
            'seed': 'train.seed',
            'epochs': 'train.epochs',
            'short_side': 'io.short_side',
            'iou': 'eval.iou_threshold',
            'mask': 'post.mask',
        }
        for attribute, key in flag_keys.items():
            value = getattr(args, attribute, None)
            if value is not None:
                config.set_value(key, value, source=f"--{attribute.replace('_', '-')}")
        if getattr(args, 'epochs', None) is not None:
            # an explicit epoch count replaces a configured step budget
            config.set_value('train.max_steps', 0, source='--epochs')
        config.validate()
        return config

    def _emit(self, args, payload: Dict[str, Any], text: str) -> None:
        print(to_json(payload) if args.json else text)

    def _save_effective_config(self, out_dir: Path, command: str) -> None:
        atomic_write_text(out_dir / get_output_path(command, 'effective_config'), self.config.to_lines())

    # -- labelgen ---------------------------------------------------------

    def cmd_labelgen(self, args) -> int:
        """Write one kernel mask per image plus a summary"""
        config = self.config
        out_dir = Path(args.out_dir)
        images = list_images(Path(args.images_dir), config.io.enable_png)
        self.logger.info(f"Generating kernel labels for {len(images)} image(s)")

        per_image: Dict[str, Any] = {}
        failures: List[Dict[str, Any]] = []
        exit_code = ExitCode.SUCCESS
        for image_path in images:
            try:
                image = read_image(image_path, config.io.enable_png)
                instances = read_annotations(annotation_for(image_path, Path(args.annotations_dir)))
                texts, ignored, degenerate = split_instances(instances)
                label = make_kernel_label(texts, config.model.gamma, (image.height, image.width), dont_care=ignored)
                write_mask(label.mask, out_dir / get_output_path('labelgen', 'kernel_mask', image_path.stem))
                summary = label.summary()
                summary.update(ignored=len(ignored), degenerate=degenerate)
                per_image[image_path.stem] = summary
            except DetectorError as e:
                failures.append({"file": str(image_path), "error": e.message})
                exit_code = max(exit_code, e.exit_code)
                self.logger.warning(f"Label generation failed for {image_path.name}: {e.message}")

        totals = {
            "images": len(per_image),
            "instances": sum(s["instances"] for s in per_image.values()),
            "collapsed": sum(s["collapsed"] for s in per_image.values()),
            "ignored": sum(s["ignored"] for s in per_image.values()),
            "failed": len(failures),
        }
        summary_doc = {"totals": totals, "images": per_image, "failures": failures}
        atomic_write_text(out_dir / get_output_path('labelgen', 'summary'),
                          yaml.safe_dump(summary_doc, sort_keys=True, default_flow_style=False))
        self.logger.log_operation("labelgen", not failures, totals)

        lines = [f"🏷️  Kernel labels: {totals['images']} image(s), {totals['instances']} instance(s), "
                 f"{totals['collapsed']} collapsed, {totals['ignored']} don't-care"]
        lines += [f"   ❌ {f['file']}: {f['error']}" for f in failures]
        self._emit(args, summary_doc, "\n".join(lines))
        return int(exit_code)

    # -- train ------------------------------------------------------------

    def cmd_train(self, args) -> int:
        """Train from a data directory or a synthetic set"""
        config = self.config
        out_dir = Path(args.out)
        cfg = config.train

        if args.synthetic:
            generated = synth_dataset(cfg.seed, cfg.synthetic_count, cfg.synthetic_size, cfg.instances_per_image)
            write_dataset(generated, out_dir / get_output_path('train', 'dataset_images'),
                          out_dir / get_output_path('train', 'dataset_annotations'))
            samples = from_synthetic(generated)
        else:
            samples = load_dataset(Path(args.data_dir), config.io.enable_png)
        if not samples and (cfg.epochs > 0 or cfg.max_steps > 0):
            raise ConfigError("No training images found", ErrorContext(operation="train"))

        self._save_effective_config(out_dir, 'train')
        model = StdModel(config.model, seed=cfg.seed)
        self.logger.info(f"Model with {model.parameter_count()} parameters", {"model": config.model.__dict__})
        result = train(model, samples, cfg, config.loss, config.io.mean, config.io.std, out_dir=out_dir)

        summary = result.summary()
        self.logger.log_operation("train", True, summary)
        final = f"{summary['final_loss']:.5f}" if summary['final_loss'] is not None else "n/a"
        text = (f"✅ Trained {result.steps} step(s), final loss {final}, alpha {summary['alpha']}\n"
                f"   Checkpoint: {result.checkpoint}\n"
                f"   Checksum:   {result.checksum}")
        self._emit(args, summary, text)
        return 0

    # -- infer ------------------------------------------------------------

    def _input_images(self, images: str) -> List[Path]:
        path = Path(images)
        if path.is_dir():
            return list_images(path, self.config.io.enable_png)
        return [path]

    def cmd_infer(self, args) -> int:
        """Detect text in images and write one detection file per image"""
        config = self.config
        out_dir = Path(args.out_dir)
        model, _ = load_checkpoint(args.checkpoint, fallback=config.model)
        params = PostprocessParams.from_config(config)
        self._save_effective_config(out_dir, 'infer')

        counts = {}
        with precision(model.config.precision):
            for image_path in self._input_images(args.images):
                image = read_image(image_path, config.io.enable_png)
                result = infer_image(model, image, params, config.io.mean, config.io.std,
                                     short_side=config.io.short_side, mask=config.post.mask)
                write_detection_file(out_dir / get_output_path('infer', 'detections', image_path.stem),
                                     [(d.score, d.polygon) for d in result.detections])
                if args.overlay:
                    overlay = draw_overlay(image, result.detections, config.io.overlay_color)
                    kind = 'overlay' if overlay.channels == 3 else 'overlay_gray'
                    write_image(overlay, out_dir / get_output_path('infer', kind, image_path.stem))
                counts[image_path.stem] = len(result.detections)
                self.logger.info(f"{image_path.name}: {len(result.detections)} detection(s)",
                                 {"plan": result.plan.to_dict()})

        self.logger.log_operation("infer", True, {"images": len(counts), "mask": config.post.mask})
        text = "\n".join([f"🔎 {len(counts)} image(s), mask '{config.post.mask}'"] +
                         [f"   {stem}: {n} detection(s)" for stem, n in counts.items()])
        self._emit(args, {"mask": config.post.mask, "detections": counts}, text)
        return 0

    # -- eval -------------------------------------------------------------

    def _evaluate(self, det_dir: Path, gt_dir: Path) -> Tuple[EvalReport, List[str]]:
        config = self.config
        gt_files = {p.stem: p for p in list_text_files(gt_dir)}
        det_files = {p.stem: p for p in list_text_files(det_dir)}
        unmatched = sorted(f"{det_dir / s}.txt (no ground truth)" for s in set(det_files) - set(gt_files))
        unmatched += sorted(f"{gt_dir / s}.txt (no detections)" for s in set(gt_files) - set(det_files))

        report = EvalReport()
        for stem in sorted(set(gt_files) & set(det_files)):
            texts, ignored, _ = split_instances(read_annotations(gt_files[stem]))
            detections = [points for _, points in read_detection_file(det_files[stem])]
            report.add(match_detections(detections, texts, ignored, config.eval.iou_threshold,
                                        config.eval.dont_care_threshold, name=stem))
        return report, unmatched

    def cmd_eval(self, args) -> int:
        """Match detections against ground truth and write the reports"""
        report, unmatched = self._evaluate(Path(args.det_dir), Path(args.gt_dir))
        out_dir = Path(args.out)
        report.write(out_dir / get_output_path('eval', 'report_text'), out_dir / get_output_path('eval', 'report_json'))

        payload: Dict[str, Any] = {"summary": report.summary(), "unmatched": unmatched}
        lines = [f"📊 P {report.precision:.4f}  R {report.recall:.4f}  F {report.f_measure:.4f}  "
                 f"({report.tp} TP, {report.fp} FP, {report.fn} FN over {len(report.images)} image(s))"]
        if args.coarse_dir:
            coarse, _ = self._evaluate(Path(args.coarse_dir), Path(args.gt_dir))
            delta = compare_reports(coarse, report)
            payload["comparison"] = delta
            lines.append(f"   Coarse F {delta['coarse_f_measure']:.4f} -> refined F {delta['refined_f_measure']:.4f} "
                         f"({delta['delta_f_measure']:+.4f})")
        lines += [f"   ❌ unmatched: {name}" for name in unmatched]

        self.logger.log_operation("eval", not unmatched, payload["summary"])
        self._emit(args, payload, "\n".join(lines))
        return int(ExitCode.VALIDATION_FAILURE) if unmatched else 0

    # -- bench ------------------------------------------------------------

    def cmd_bench(self, args) -> int:
        """Time forward + post-processing and report per-block cost"""
        config = self.config
        if args.checkpoint:
            model, _ = load_checkpoint(args.checkpoint, fallback=config.model)
        else:
            model = StdModel(config.model, seed=config.train.seed).eval()
        params = PostprocessParams.from_config(config)

        if args.images:
            images = [read_image(p, config.io.enable_png) for p in self._input_images(args.images)]
        else:
            images = [s.image for s in synth_dataset(config.train.seed, 2, args.size, 1)]
        inputs = [image_to_input(image, config.io.mean, config.io.std, short_side=config.io.short_side)[0]
                  for image in images]
        if not inputs:
            raise ConfigError("No images to benchmark", ErrorContext(operation="bench"))

        with precision(model.config.precision):
            timing = timing_harness(lambda t: detect_from_model(model, t, params, config.post.mask), inputs,
                                    warmup=args.warmup, iters=args.iters)
        height, width = inputs[0].shape[2:]
        costs = count_flops_params(model, (height, width))

        payload = {"timing": timing.to_dict(), "input_size": [height, width],
                   "blocks": {name: cost.to_dict() for name, cost in costs.items()}}
        if args.out:
            atomic_write_text(Path(args.out) / get_output_path('bench', 'report_json'),
                              json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self.logger.log_operation("bench", True, payload["timing"])
        text = (f"⏱️  {timing.mean_ms:.2f} ms/image, {timing.fps:.2f} FPS at {width}x{height} "
                f"({timing.iterations} iterations, {timing.warmup} warmup)\n\n{format_cost_table(costs)}")
        self._emit(args, payload, text)
        return 0

    # -- verify -----------------------------------------------------------

    def cmd_verify(self, args) -> int:
        """Run the built-in oracle suite"""
        suite = OracleSuite(trials=args.trials, seed=args.seed if args.seed is not None else 0,
                            round_trip_samples=args.round_trip_samples, shape_trials=args.shape_trials)
        results = suite.run(args.only)
        failed = [r.name for r in results if not r.passed]
        self._emit(args, {"passed": not failed, "checks": [r.to_dict() for r in results]}, format_results(results))
        self.logger.log_operation("verify", not failed, {"failed": failed})
        if failed:
            raise VerificationError(f"{len(failed)} oracle(s) failed: {', '.join(failed)}", failed_checks=failed,
                                    context=ErrorContext(operation="verify"))
        return 0

    # -- plumbing ---------------------------------------------------------

    def run(self, args: list = None) -> int:
        """Main entry point"""
        parser = self.create_parser()
        parsed_args = parser.parse_args(args)

        if not hasattr(parsed_args, 'func'):
            parser.print_help()
            return 0

        operation = parsed_args.func.__name__
        try:
            self.setup_logging(parsed_args.verbose, parsed_args.quiet)
            self.config = self.load_config(parsed_args)
            if self.config.io.log_dir:
                self.setup_logging(parsed_args.verbose, parsed_args.quiet, self.config.io.log_dir)
            return parsed_args.func(parsed_args)
        except Exception as e:
            return self.error_handler.handle_error(e, operation=operation,
                                                   json_output=getattr(parsed_args, 'json', False))

    def create_parser(self) -> argparse.ArgumentParser:
        """Create command line argument parser"""
        parser = argparse.ArgumentParser(
            prog="std-detector",
            description="Scene text detector: kernel labels, training, inference and evaluation",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  std-detector labelgen data/annotations data/images out/labels
  std-detector --config templates/configs/toy_overfit.cfg train --synthetic --seed 7 --out runs/toy
  std-detector infer runs/toy data/images out/dets --overlay --short-side 736
  std-detector eval out/dets data/annotations --iou 0.5 --out out/eval
  std-detector bench --iters 5
  std-detector verify

For more help on a specific command:
  std-detector <command> --help
            """
        )

        # Global flags
        parser.add_argument('--verbose', '-v', action='store_true',
                            help='Increase verbosity (show debug messages)')
        parser.add_argument('--quiet', '-q', action='store_true',
                            help='Suppress output except errors')
        parser.add_argument('--json', action='store_true',
                            help='Output structured JSON data')
        parser.add_argument('--config', '-c', help='Run configuration file (section.key=value lines)')
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help='Override one configuration value (repeatable)')

        subparsers = parser.add_subparsers(dest='command', help='Available commands')

        labelgen_parser = subparsers.add_parser('labelgen', help='Generate kernel masks from annotations')
        labelgen_parser.add_argument('annotations_dir', help='Directory of <stem>.txt annotation files')
        labelgen_parser.add_argument('images_dir', help='Directory of PGM/PPM images')
        labelgen_parser.add_argument('out_dir', help='Output directory for <stem>_kernel.pgm masks')
        labelgen_parser.set_defaults(func=self.cmd_labelgen)

        train_parser = subparsers.add_parser('train', help='Train the detector')
        source = train_parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--synthetic', action='store_true', help='Train on a generated synthetic set')
        source.add_argument('--data-dir', help='Directory with images/ and annotations/ subdirectories')
        train_parser.add_argument('--seed', type=int, help='Random seed (train.seed)')
        train_parser.add_argument('--epochs', type=int, help='Number of epochs (train.epochs)')
        train_parser.add_argument('--out', default='runs/train', help='Checkpoint output directory')
        train_parser.set_defaults(func=self.cmd_train)

        infer_parser = subparsers.add_parser('infer', help='Detect text in images')
        infer_parser.add_argument('checkpoint', help='Checkpoint directory, manifest or weights file')
        infer_parser.add_argument('images', help='Image file or directory')
        infer_parser.add_argument('out_dir', help='Output directory for detection files')
        infer_parser.add_argument('--overlay', action='store_true', help='Also write <stem>_overlay.ppm')
        infer_parser.add_argument('--short-side', type=int, help='Resize so the short side has N pixels')
        infer_parser.add_argument('--mask', choices=MASK_CHOICES, help='Post-process the coarse or refined mask')
        infer_parser.set_defaults(func=self.cmd_infer)

        eval_parser = subparsers.add_parser('eval', help='Evaluate detections against ground truth')
        eval_parser.add_argument('det_dir', help='Directory of detection files')
        eval_parser.add_argument('gt_dir', help='Directory of ground-truth annotation files')
        eval_parser.add_argument('--iou', type=float, help='IoU threshold for a match (eval.iou_threshold)')
        eval_parser.add_argument('--out', default='.', help='Directory for report.txt and report.json')
        eval_parser.add_argument('--coarse-dir', help='Detections from the coarse mask, for a comparison')
        eval_parser.set_defaults(func=self.cmd_eval)

        bench_parser = subparsers.add_parser('bench', help='Measure speed and per-block cost')
        bench_parser.add_argument('--checkpoint', help='Checkpoint to benchmark (default: fresh model)')
        bench_parser.add_argument('--images', help='Image file or directory (default: synthetic)')
        bench_parser.add_argument('--size', type=int, default=256, help='Synthetic image size')
        bench_parser.add_argument('--short-side', type=int, help='Resize so the short side has N pixels')
        bench_parser.add_argument('--warmup', type=int, default=1, help='Untimed warmup iterations')
        bench_parser.add_argument('--iters', type=int, default=5, help='Timed iterations')
        bench_parser.add_argument('--out', help='Directory for bench.json')
        bench_parser.set_defaults(func=self.cmd_bench)

        verify_parser = subparsers.add_parser('verify', help='Run the built-in oracle suite')
        verify_parser.add_argument('--trials', type=int, default=GRADIENT_TRIALS, help='Random shapes per operator')
        verify_parser.add_argument('--shape-trials', type=int, default=SHAPE_TRIALS,
                                   help='Random input sizes for the mask shape contracts')
        verify_parser.add_argument('--round-trip-samples', type=int, default=ROUND_TRIP_SAMPLES,
                                   help='Random rectangles for the geometry round trip')
        verify_parser.add_argument('--only', action='append', help='Run only the named oracle (repeatable)')
        verify_parser.add_argument('--seed', type=int, help='Seed of the random cases')
        verify_parser.set_defaults(func=self.cmd_verify)

        return parser


def main():
    """Main entry point for CLI tool"""
    cli = DetectorCLI()
    return cli.run()


if __name__ == '__main__':
    sys.exit(main())
