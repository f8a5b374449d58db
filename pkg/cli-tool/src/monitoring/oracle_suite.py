#!/usr/bin/env python3
"""
Built-in Oracle Suite

Self-checks behind the `verify` command: finite-difference gradient checks
of every differentiable operator, mask shape contracts, multi-branch MAC
accounting, the cascade receptive field, the shrink/expand geometry round
trip and F-measure arithmetic against published precision/recall pairs.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core import functional as F
from src.core.functional import ConvSpec
from src.core.gradcheck import grad_check
from src.core.losses import bce_ohem, dice_loss
from src.core.tensor import Tensor, no_grad, precision
from src.evaluation.metrics import f_measure, polygon_iou
from src.geometry.labels import make_kernel_label
from src.geometry.polygon import (Polygon, expansion_distance, mask_iou, offset_polygon, rasterize,
                                  shrink_distance)
from src.model.miem import MIEMBlock, branch_macs_per_pixel, dense3x3_macs_per_pixel
from src.model.layers import count_conv_macs
from src.model.scm import CPFSM, receptive_radius
from src.model.std_model import ModelConfig, StdModel, expected_shapes, std_forward
from src.postprocess.detector import PostprocessParams, detect
from src.utils.error_handling import DetectorError

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
F_TOLERANCE = 0.05

GRADIENT_TRIALS = 20
SHAPE_TRIALS = 100
ROUND_TRIP_SAMPLES = 500

ROUND_TRIP_IOU = 0.8
ROUND_TRIP_ASPECTS = (1.0, 10.0)
ROUND_TRIP_SIDES = (16, 128)
# Share of the stratified rectangle family at or above ROUND_TRIP_IOU under
# the exact round trip (brute_force_round_trip_rate). Its IoU depends on the
# aspect only and drops below 0.8 past aspect 2.895, so (2.895 - 1) / 9.
ROUND_TRIP_FROZEN_RATE = 0.21
ROUND_TRIP_RATE_TOLERANCE = 0.04

# (precision, recall, F) in percent, as printed in published benchmark tables
PUBLISHED_PRF = (
    (89.2, 80.6, 84.7), (87.3, 82.3, 84.7), (88.7, 80.5, 84.4), (89.1, 83.0, 85.9),
    (88.7, 84.1, 86.3), (87.9, 84.3, 86.1), (88.6, 80.6, 84.4), (89.3, 81.1, 85.0),
    (87.8, 79.4, 83.4), (87.1, 82.5, 84.7), (82.4, 81.8, 82.1), (83.3, 82.5, 82.9),
    (86.0, 83.2, 84.6),
)

GradCase = Tuple[str, Callable[..., Tensor], List[Tensor]]


@dataclass
class OracleResult:
    """Outcome of one oracle"""
    name: str
    category: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    metrics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "category": self.category, "passed": self.passed, "detail": self.detail,
                "seconds": round(self.seconds, 3), "metrics": self.metrics}


# -- gradient cases ----------------------------------------------------------

def _leaf(rng: np.random.Generator, shape, name: str, low: Optional[float] = None, high: Optional[float] = None,
          away_from_zero: bool = False) -> Tensor:
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape)
    if away_from_zero:
        data = np.sign(data) * (0.1 + np.abs(data))
        data[data == 0] = 0.5
    return Tensor(data, requires_grad=True, name=name)


def _conv_case(rng, name: str, kernel, dilation: int = 1, padding=0, stride: int = 1) -> GradCase:
    n, c, o = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    h = int(rng.integers(dilation * (kh - 1) + 2, dilation * (kh - 1) + 6))
    w = int(rng.integers(dilation * (kw - 1) + 2, dilation * (kw - 1) + 6))
    spec = ConvSpec.make(c, o, kernel, stride, dilation, padding, True)
    inputs = [_leaf(rng, (n, c, h, w), "x"), _leaf(rng, spec.weight_shape, "weight"), _leaf(rng, (o,), "bias")]
    return name, lambda x, wt, b: F.conv2d(x, spec, wt, b), inputs


def _feature_shape(rng) -> Tuple[int, int, int, int]:
    return (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 7)))


def operator_cases(rng: np.random.Generator) -> List[GradCase]:
    """One randomly shaped instance of every differentiable operator"""
    cases = [_conv_case(rng, f"conv2d_dilation{d}", 3, dilation=d, padding=d) for d in (1, 2, 3, 4)]
    cases += [
        _conv_case(rng, "conv2d_1x9", (1, 9), padding=(0, 0, 4, 4)),
        _conv_case(rng, "conv2d_9x1", (9, 1), padding=(4, 4, 0, 0)),
        _conv_case(rng, "conv2d_stride2", 3, padding=1, stride=2),
    ]

    n, c, h, w = _feature_shape(rng)
    o = int(rng.integers(1, 4))
    tspec = ConvSpec.make(c, o, 2, 2, 1, 0, True)
    cases.append(("conv_transpose2d", lambda x, wt, b: F.conv_transpose2d(x, tspec, wt, b),
                  [_leaf(rng, (n, c, h, w), "x"), _leaf(rng, tspec.transposed_weight_shape, "weight"),
                   _leaf(rng, (o,), "bias")]))

    n, c, h, w = _feature_shape(rng)
    n = max(n, 2)

    def bn_train(x, g, b):
        return F.batch_norm(x, g, b, (np.zeros(c), np.ones(c)), training=True)

    cases.append(("batch_norm_train", bn_train,
                  [_leaf(rng, (n, c, h, w), "x"), _leaf(rng, (c,), "gamma", 0.5, 1.5), _leaf(rng, (c,), "beta")]))

    running_mean, running_var = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)

    def bn_eval(x, g, b):
        return F.batch_norm(x, g, b, (running_mean.copy(), running_var.copy()), training=False)

    cases.append(("batch_norm_eval", bn_eval,
                  [_leaf(rng, (n, c, h, w), "x"), _leaf(rng, (c,), "gamma", 0.5, 1.5), _leaf(rng, (c,), "beta")]))

    shape = _feature_shape(rng)
    cases += [
        ("sigmoid", F.sigmoid, [_leaf(rng, shape, "x")]),
        ("relu", F.relu, [_leaf(rng, shape, "x", away_from_zero=True)]),
        ("add", F.add, [_leaf(rng, shape, "x"), _leaf(rng, shape, "y")]),
        ("mul_elementwise", F.mul_elementwise, [_leaf(rng, shape, "x"), _leaf(rng, shape, "y")]),
        ("mul_channel_broadcast", F.mul_channel_broadcast,
         [_leaf(rng, shape, "x"), _leaf(rng, (shape[0], 1) + shape[2:], "mask", 0.0, 1.0)]),
        ("mul_scalar_param", F.mul_scalar_param, [_leaf(rng, shape, "x"), _leaf(rng, (1, 1, 1, 1), "alpha")]),
        ("scale", lambda x: F.scale(x, 6.0), [_leaf(rng, shape, "x")]),
        ("concat_channels", lambda a, b: F.concat_channels([a, b]),
         [_leaf(rng, shape, "a"), _leaf(rng, (shape[0], int(rng.integers(1, 4))) + shape[2:], "b")]),
        ("upsample_nearest", lambda x: F.upsample_nearest(x, 4), [_leaf(rng, shape, "x")]),
        ("slice_channels", lambda x: F.slice_channels(x, 1, shape[1] + 1),
         [_leaf(rng, (shape[0], shape[1] + 2) + shape[2:], "x")]),
    ]

    n, _, h, w = _feature_shape(rng)
    mask_shape = (n, 1, h + 2, w + 2)
    target = (rng.random(mask_shape) < 0.3).astype(np.float64)
    ignore = (rng.random(mask_shape) < 0.1).astype(np.float64)
    cases.append(("dice_loss", lambda p: dice_loss(p, target, ignore),
                  [_leaf(rng, mask_shape, "pred", 0.05, 0.95)]))
    cases.append(("bce_ohem", lambda p: bce_ohem(p, target, ignore, 3.0),
                  [_leaf(rng, mask_shape, "pred", 0.05, 0.95)]))
    return cases


def gradient_suite(trials: int = GRADIENT_TRIALS, seed: int = 0,
                   tolerance: float = GRAD_TOLERANCE) -> Dict[str, float]:
    """Worst relative error per operator over `trials` random shapes, at 64-bit precision"""
    worst: Dict[str, float] = {}
    with precision(64):
        for trial in range(trials):
            rng = np.random.default_rng(seed + trial)
            for name, fn, inputs in operator_cases(rng):
                report = grad_check(fn, inputs, tolerance=tolerance, seed=seed + trial, name=name)
                worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
    return worst


# -- other oracles -------------------------------------------------------------

def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(base_channels=4, fpn_width=8, fused_width=8, cpfsm_width=8)
    values.update(overrides)
    return ModelConfig(**values)


def shape_contract_trials(trials: int = SHAPE_TRIALS, seed: int = 0) -> List[Tuple[Tuple[int, int], bool]]:
    """Random H, W (multiples of 32 in 64..320) through a tiny model"""
    rng = np.random.default_rng(seed)
    config = tiny_model_config()
    model = StdModel(config, seed=seed).eval()
    outcomes = []
    with no_grad():
        for _ in range(trials):
            height, width = (int(v) * 32 for v in rng.integers(2, 11, size=2))
            coarse, refined = std_forward(Tensor(rng.standard_normal((1, 3, height, width))), model)
            coarse_hw, refined_hw = expected_shapes(config, height, width)
            ok = coarse.shape == (1, 1) + coarse_hw and refined is not None and refined.shape == (1, 1) + refined_hw
            outcomes.append(((height, width), bool(ok)))
    return outcomes


def miem_mac_accounting(widths: Sequence[int] = (8, 16, 32, 64, 128)) -> Dict[int, Tuple[int, int]]:
    """Per-pixel branch MACs (closed form and counted from the built block) against 2.25 C^2"""
    rng = np.random.default_rng(0)
    results = {}
    for width in widths:
        block = MIEMBlock(width, rng)
        counted = sum(count_conv_macs(branch.spec, 1, 1) for branch in block.branches)
        results[width] = (branch_macs_per_pixel(width), counted)
    return results


@dataclass
class ReceptiveFieldReport:
    """Gradient support of every CPFSM output pixel against the closed-form radius"""
    radius: int
    max_reach: int
    min_interior_reach: int
    pixels: int

    @property
    def passed(self) -> bool:
        return self.max_reach <= self.radius and self.min_interior_reach == self.radius


def cascade_gradient_support(channels: int = 64, size: int = 33, seed: int = 0,
                             chunk: int = 11) -> ReceptiveFieldReport:
    """
    Backpropagate from each output pixel in turn and measure how far
    (Chebyshev distance) its nonzero input gradient reaches.

    Every pixel must stay within the radius. Pixels at least a radius away
    from the border must reach it exactly.
    """
    rng = np.random.default_rng(seed)
    module = CPFSM(channels, channels, rng)
    radius = receptive_radius()
    base = rng.standard_normal((1, channels, size, size))
    rows, cols = np.indices((size, size))
    pixels = [(r, c) for r in range(size) for c in range(size)]
    reach = np.full((size, size), -1, dtype=np.int64)

    for start in range(0, len(pixels), chunk):
        batch = pixels[start:start + chunk]
        x = Tensor(np.repeat(base, len(batch), axis=0), requires_grad=True)
        out = module(x)
        seed_grad = np.zeros(out.shape)
        for b, (r, c) in enumerate(batch):
            seed_grad[b, :, r, c] = rng.uniform(0.5, 1.5, out.shape[1])
        out.backward(seed_grad)
        support = np.abs(x.grad).sum(axis=1) > 0
        for b, (r, c) in enumerate(batch):
            if support[b].any():
                distance = np.maximum(np.abs(rows - r), np.abs(cols - c))
                reach[r, c] = int(distance[support[b]].max())

    interior = reach[radius:size - radius, radius:size - radius]
    return ReceptiveFieldReport(radius=radius, max_reach=int(reach.max()),
                                min_interior_reach=int(interior.min()) if interior.size else -1,
                                pixels=len(pixels))


def random_rectangles(count: int, seed: int = 0, aspect_range: Tuple[float, float] = ROUND_TRIP_ASPECTS,
                      side_range: Tuple[int, int] = ROUND_TRIP_SIDES) -> List[Tuple[int, int]]:
    """
    (width, height) pairs with integer sides. Aspects are stratified over
    `aspect_range` (one uniform draw per equal-width stratum), short sides
    uniform over `side_range`, orientation random.
    """
    rng = np.random.default_rng(seed)
    low, high = aspect_range
    aspects = low + (high - low) * (np.arange(count) + rng.random(count)) / max(count, 1)
    rng.shuffle(aspects)
    rects = []
    for aspect in aspects:
        short = int(rng.integers(side_range[0], side_range[1] + 1))
        long = max(short, int(round(short * aspect)))
        rects.append((long, short) if rng.random() < 0.5 else (short, long))
    return rects


def round_trip_iou(width: int, height: int, gamma: float = 0.4, beta: float = 1.5, margin: int = 16) -> float:
    """Shrink, rasterize, detect and expand one rectangle; IoU of the best detection with the original"""
    original = Polygon.rectangle(margin, margin, margin + width, margin + height)
    size = (height + 2 * margin, width + 2 * margin)
    label = make_kernel_label([original], gamma, size)
    detections = detect(label.mask.astype(np.float64), PostprocessParams(beta=beta, min_area=1))
    return max((polygon_iou(d.polygon, original) for d in detections), default=0.0)


def brute_force_round_trip_iou(width: int, height: int, gamma: float = 0.4, beta: float = 1.5,
                               supersample: int = 4, margin: int = 16) -> float:
    """
    The same round trip without pixels in between: offset the exact
    rectangle in, offset the exact kernel out, then compare both on a grid
    `supersample` times finer than the image.
    """
    original = Polygon.rectangle(margin, margin, margin + width, margin + height)
    kernels = offset_polygon(original, -shrink_distance(original, gamma))
    if not kernels:
        return 0.0
    expanded = offset_polygon(kernels[0], expansion_distance(kernels[0], beta))
    if not expanded:
        return 0.0
    size = ((height + 4 * margin) * supersample, (width + 4 * margin) * supersample)
    truth = rasterize([original.scaled(supersample, supersample)], size)
    result = rasterize([expanded[0].scaled(supersample, supersample)], size)
    return mask_iou(truth, result)


def geometry_round_trip(samples: int = ROUND_TRIP_SAMPLES, seed: int = 0, gamma: float = 0.4,
                        beta: float = 1.5) -> Tuple[float, List[float]]:
    ious = [round_trip_iou(w, h, gamma, beta) for w, h in random_rectangles(samples, seed)]
    passed = sum(iou >= ROUND_TRIP_IOU for iou in ious)
    return passed / max(len(ious), 1), ious


def brute_force_round_trip_rate(samples: int = ROUND_TRIP_SAMPLES, seed: int = 0, supersample: int = 4,
                                gamma: float = 0.4, beta: float = 1.5) -> float:
    """Pass rate of the exact round trip over the rectangle family; the source of ROUND_TRIP_FROZEN_RATE"""
    ious = [brute_force_round_trip_iou(w, h, gamma, beta, supersample) for w, h in random_rectangles(samples, seed)]
    return sum(iou >= ROUND_TRIP_IOU for iou in ious) / max(len(ious), 1)


def f_measure_errors() -> List[Tuple[Tuple[float, float, float], float]]:
    return [((p, r, f), abs(100.0 * f_measure(p / 100.0, r / 100.0) - f)) for p, r, f in PUBLISHED_PRF]


# -- suite -------------------------------------------------------------------

class OracleSuite:
    """Runs the oracles and collects one OracleResult each"""

    def __init__(self, trials: int = GRADIENT_TRIALS, seed: int = 0, round_trip_samples: int = ROUND_TRIP_SAMPLES,
                 shape_trials: int = SHAPE_TRIALS):
        self.trials = trials
        self.seed = seed
        self.round_trip_samples = round_trip_samples
        self.shape_trials = shape_trials
        self.checks: List[Tuple[str, str, Callable[[], OracleResult]]] = [
            ("gradients", "gradient", self.check_gradients),
            ("shape_contracts", "shape", self.check_shapes),
            ("miem_macs", "accounting", self.check_macs),
            ("cascade_receptive_field", "shape", self.check_receptive_field),
            ("geometry_round_trip", "geometry", self.check_round_trip),
            ("f_measure_arithmetic", "metrics", self.check_f_measure),
        ]

    def check_gradients(self) -> OracleResult:
        worst = gradient_suite(self.trials, self.seed)
        failing = sorted(name for name, error in worst.items() if error > GRAD_TOLERANCE)
        detail = (f"{len(worst)} operators x {self.trials} shapes, worst {max(worst.values()):.2e}"
                  if not failing else f"failed: {', '.join(failing)}")
        return OracleResult("gradients", "gradient", not failing, detail,
                            metrics={name: float(f"{err:.3e}") for name, err in worst.items()})

    def check_shapes(self) -> OracleResult:
        outcomes = shape_contract_trials(self.shape_trials, self.seed)
        failing = [size for size, ok in outcomes if not ok]
        detail = f"{len(outcomes) - len(failing)}/{len(outcomes)} random sizes"
        return OracleResult("shape_contracts", "shape", not failing, detail,
                            metrics={"failing_sizes": [list(s) for s in failing]})

    def check_macs(self) -> OracleResult:
        results = miem_mac_accounting()
        bad = [width for width, (closed, counted) in results.items()
               if not (closed == counted and 4 * closed == dense3x3_macs_per_pixel(width))]
        return OracleResult("miem_macs", "accounting", not bad,
                            "branches = 2.25 C^2 for C in " + ",".join(str(w) for w in results),
                            metrics={str(w): list(v) for w, v in results.items()})

    def check_receptive_field(self) -> OracleResult:
        report = cascade_gradient_support(seed=self.seed)
        return OracleResult("cascade_receptive_field", "shape", report.passed,
                            f"{report.pixels} output pixels, reach {report.max_reach} px "
                            f"(interior minimum {report.min_interior_reach} px), radius {report.radius} px",
                            metrics={"max_reach": report.max_reach, "min_interior_reach": report.min_interior_reach,
                                     "radius": report.radius, "pixels": report.pixels})

    def check_round_trip(self) -> OracleResult:
        rate, ious = geometry_round_trip(self.round_trip_samples, self.seed)
        drift = abs(rate - ROUND_TRIP_FROZEN_RATE)
        return OracleResult("geometry_round_trip", "geometry", drift <= ROUND_TRIP_RATE_TOLERANCE,
                            f"{rate:.1%} of {len(ious)} rectangles at IoU >= {ROUND_TRIP_IOU} "
                            f"(frozen {ROUND_TRIP_FROZEN_RATE:.1%})",
                            metrics={"pass_rate": rate, "frozen_rate": ROUND_TRIP_FROZEN_RATE,
                                     "min_iou": min(ious) if ious else None})

    def check_f_measure(self) -> OracleResult:
        errors = f_measure_errors()
        worst = max(error for _, error in errors)
        return OracleResult("f_measure_arithmetic", "metrics", worst <= F_TOLERANCE,
                            f"{len(errors)} published triples, worst deviation {worst:.3f}",
                            metrics={"worst": worst})

    def run(self, only: Optional[Sequence[str]] = None) -> List[OracleResult]:
        results = []
        for name, category, check in self.checks:
            if only and name not in only:
                continue
            start = time.perf_counter()
            try:
                result = check()
            except DetectorError as e:
                result = OracleResult(name, category, False, f"error: {e.message}")
            result.seconds = time.perf_counter() - start
            logger.info(f"Oracle {name}: {'PASS' if result.passed else 'FAIL'} ({result.detail})")
            results.append(result)
        return results


def format_results(results: Sequence[OracleResult]) -> str:
    """Pass/fail table"""
    lines = ["🔍 Oracle Suite", "=" * 50, ""]
    for result in results:
        status = "✅" if result.passed else "❌"
        lines.append(f"   {status} {result.name:<26} {result.seconds:7.2f}s  {result.detail}")
    passed = sum(r.passed for r in results)
    lines += ["", f"📊 Summary: {passed}/{len(results)} checks passed"]
    return "\n".join(lines)
