"""
Detection evaluation by polygon IoU.

Per image: detections overlapping a don't-care region by at least
`dont_care_threshold` of their own area are discarded, then the remaining
detections and ground truths are matched one-to-one, greedily in
descending IoU order (ties: lower detection index, then lower ground-truth
index), accepting pairs with IoU >= `iou_threshold`.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.validation import make_valid

from src.geometry.polygon import Polygon
from src.utils.fileio import atomic_write_text

logger = logging.getLogger(__name__)

PolygonLike = Union[Polygon, np.ndarray]


def _shape(poly: PolygonLike):
    points = poly.vertices if isinstance(poly, Polygon) else np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if len(points) < 3:
        return None
    shape = ShapelyPolygon(points)
    if not shape.is_valid:
        shape = make_valid(shape)
    if shape.is_empty or shape.area <= 0:
        return None
    return shape


def polygon_iou(a: PolygonLike, b: PolygonLike) -> float:
    """area(a & b) / area(a | b); 0 for degenerate input"""
    sa, sb = _shape(a), _shape(b)
    if sa is None or sb is None:
        return 0.0
    union = sa.union(sb).area
    if union <= 0:
        return 0.0
    return float(min(max(sa.intersection(sb).area / union, 0.0), 1.0))


def intersection_over_first(a: PolygonLike, b: PolygonLike) -> float:
    """area(a & b) / area(a)"""
    sa, sb = _shape(a), _shape(b)
    if sa is None or sb is None:
        return 0.0
    return float(sa.intersection(sb).area / sa.area)


def precision_recall_f(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall, f_measure(precision, recall)


def f_measure(precision: float, recall: float) -> float:
    """2PR / (P + R), 0 when P + R = 0"""
    total = precision + recall
    return 2.0 * precision * recall / total if total > 0 else 0.0


@dataclass
class ImageReport:
    name: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matches: List[Tuple[int, int, float]] = field(default_factory=list)   # (det, gt, iou)
    discarded: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "matches": [[d, g, round(iou, 6)] for d, g, iou in self.matches],
                "discarded": list(self.discarded)}


def match_detections(dets: Sequence[PolygonLike], gts: Sequence[PolygonLike],
                     dont_care: Sequence[PolygonLike] = (), iou_threshold: float = 0.5,
                     dont_care_threshold: float = 0.5, name: str = "") -> ImageReport:
    report = ImageReport(name=name)

    kept = []
    for index, det in enumerate(dets):
        if any(intersection_over_first(det, region) >= dont_care_threshold for region in dont_care):
            report.discarded.append(index)
        else:
            kept.append(index)

    candidates = []
    for d in kept:
        for g, gt in enumerate(gts):
            iou = polygon_iou(dets[d], gt)
            if iou >= iou_threshold:
                candidates.append((-iou, d, g))
    candidates.sort()

    used_dets, used_gts = set(), set()
    for negative_iou, d, g in candidates:
        if d in used_dets or g in used_gts:
            continue
        used_dets.add(d)
        used_gts.add(g)
        report.matches.append((d, g, -negative_iou))

    report.tp = len(report.matches)
    report.fp = len(kept) - report.tp
    report.fn = len(gts) - report.tp
    return report


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    images: List[ImageReport] = field(default_factory=list)

    @classmethod
    def from_images(cls, images: Sequence[ImageReport]) -> "EvalReport":
        report = cls()
        for image in images:
            report.add(image)
        return report

    def add(self, image: ImageReport) -> None:
        self.tp += image.tp
        self.fp += image.fp
        self.fn += image.fn
        self.images.append(image)

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport.from_images(list(self.images) + list(other.images))

    @property
    def precision(self) -> float:
        return precision_recall_f(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return precision_recall_f(self.tp, self.fp, self.fn)[1]

    @property
    def f_measure(self) -> float:
        return precision_recall_f(self.tp, self.fp, self.fn)[2]

    def summary(self) -> Dict[str, float]:
        return {"images": len(self.images), "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": round(self.precision, 6), "recall": round(self.recall, 6),
                "f_measure": round(self.f_measure, 6)}

    def to_dict(self) -> dict:
        ordered = sorted(self.images, key=lambda i: i.name)
        return {"summary": self.summary(), "images": [i.to_dict() for i in ordered]}

    def to_text(self) -> str:
        """key: value lines, summary first, then one block per image"""
        lines = [yaml.safe_dump(self.summary(), sort_keys=False, default_flow_style=False).rstrip()]
        for image in sorted(self.images, key=lambda i: i.name):
            lines.append(f"# {image.name}")
            lines.append(f"{image.name}.tp: {image.tp}")
            lines.append(f"{image.name}.fp: {image.fp}")
            lines.append(f"{image.name}.fn: {image.fn}")
        return "\n".join(lines) + "\n"

    def write(self, text_path, json_path) -> None:
        atomic_write_text(text_path, self.to_text())
        atomic_write_text(json_path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def compare_reports(coarse: EvalReport, refined: EvalReport) -> Dict[str, float]:
    """Refined-minus-coarse deltas of precision, recall and F-measure"""
    return {
        "coarse_f_measure": coarse.f_measure,
        "refined_f_measure": refined.f_measure,
        "delta_precision": refined.precision - coarse.precision,
        "delta_recall": refined.recall - coarse.recall,
        "delta_f_measure": refined.f_measure - coarse.f_measure,
    }

