"""
Annotation and detection text files.

Annotation line:  x1,y1,x2,y2,...,xn,yn[,###]
    A trailing ### marks a don't-care instance. A trailing non-numeric
    transcription (ICDAR style) is accepted and dropped.
Detection line:   score;x1,y1,...,xn,yn
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.geometry.polygon import Polygon
from src.utils.error_handling import AnnotationError, ErrorContext, GeometryError
from src.utils.fileio import atomic_write_text, read_bytes

logger = logging.getLogger(__name__)

DONT_CARE_MARK = "###"


@dataclass
class AnnotatedInstance:
    points: np.ndarray      # (n, 2)
    dont_care: bool = False


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def parse_annotation_line(line: str, source: str = "") -> AnnotatedInstance:
    tokens = [t.strip() for t in line.strip().lstrip("﻿").split(",")]
    dont_care = False
    # Transcriptions may contain commas; strip every trailing non-numeric token
    while tokens and not _is_number(tokens[-1]):
        if tokens[-1] == DONT_CARE_MARK:
            dont_care = True
        tokens.pop()
    if len(tokens) % 2 != 0 and len(tokens) >= 7:
        # numeric transcription
        tokens.pop()
    context = ErrorContext(operation="parse_annotation", path=source or None, details={"line": line.strip()[:120]})
    if len(tokens) % 2 != 0:
        raise AnnotationError(f"Odd number of coordinates in annotation line: {line.strip()[:80]!r}",
                              context=context)
    if len(tokens) < 6:
        raise AnnotationError(f"Annotation needs at least 3 points: {line.strip()[:80]!r}", context=context)
    points = np.array([float(t) for t in tokens], dtype=np.float64).reshape(-1, 2)
    return AnnotatedInstance(points=points, dont_care=dont_care)


def read_annotations(path) -> List[AnnotatedInstance]:
    text = read_bytes(path).decode("utf-8-sig", errors="replace")
    instances = []
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            instances.append(parse_annotation_line(line, f"{path}:{number}"))
        except AnnotationError as e:
            e.context.path = f"{path}:{number}"
            raise
    return instances


def split_instances(instances: Sequence[AnnotatedInstance]) -> Tuple[List[Polygon], List[np.ndarray], int]:
    """
    (text polygons, don't-care point arrays, degenerate count). Degenerate
    text instances are moved to the don't-care set so they are neither
    learned nor counted.
    """
    texts, ignored, degenerate = [], [], 0
    for instance in instances:
        if instance.dont_care:
            ignored.append(instance.points)
            continue
        try:
            texts.append(Polygon.from_points(instance.points))
        except GeometryError as e:
            degenerate += 1
            ignored.append(instance.points)
            logger.warning(f"Degenerate annotation treated as don't-care: {e.message}")
    return texts, ignored, degenerate


def format_annotation(poly: Polygon, dont_care: bool = False) -> str:
    line = ",".join(_fmt(v) for v in poly.flat())
    return line + (f",{DONT_CARE_MARK}" if dont_care else "")


def write_annotations(path, polys: Sequence[Polygon], dont_care: Sequence[Polygon] = ()) -> None:
    lines = [format_annotation(p) for p in polys] + [format_annotation(p, True) for p in dont_care]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def _fmt(value: float) -> str:
    rounded = round(value, 2)
    return str(int(rounded)) if float(rounded).is_integer() else f"{rounded:.2f}"


def format_detection(score: float, poly: Polygon) -> str:
    return f"{score:.6f};" + ",".join(_fmt(v) for v in poly.flat())


def parse_detection_line(line: str, source: str = "") -> Tuple[float, np.ndarray]:
    context = ErrorContext(operation="parse_detection", path=source or None)
    if ";" not in line:
        raise AnnotationError(f"Detection line lacks the score separator: {line.strip()[:80]!r}", context=context)
    score_text, coords_text = line.strip().split(";", 1)
    try:
        score = float(score_text)
        values = [float(t) for t in coords_text.split(",") if t.strip()]
    except ValueError as e:
        raise AnnotationError(f"Malformed detection line: {line.strip()[:80]!r}", context=context, cause=e)
    if len(values) % 2 or len(values) < 6:
        raise AnnotationError(f"Detection needs an even count of at least 6 coordinates: {line.strip()[:80]!r}",
                              context=context)
    return score, np.array(values, dtype=np.float64).reshape(-1, 2)


def read_detection_file(path) -> List[Tuple[float, np.ndarray]]:
    text = read_bytes(path).decode("utf-8-sig", errors="replace")
    return [parse_detection_line(line, f"{path}:{n}") for n, line in enumerate(text.splitlines(), 1) if line.strip()]


def write_detection_file(path, detections: Sequence[Tuple[float, Polygon]]) -> None:
    lines = [format_detection(score, poly) for score, poly in detections]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
