"""
Deterministic synthetic text-like data: high-contrast filled quadrilaterals
on smooth textured backgrounds, with matching polygon annotations.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List

import cv2
import numpy as np

from src.geometry.annotations import write_annotations
from src.geometry.polygon import Polygon, rasterize
from src.imageio.netpbm import Image, write_image
from src.utils.error_handling import ConfigError, ErrorContext

logger = logging.getLogger(__name__)

MIN_BAND = 40
MAX_TILT_DEG = 10.0


@dataclass
class SyntheticSample:
    name: str
    image: Image
    polygons: List[Polygon]


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(90.0, 150.0, size=3)
    noise = rng.standard_normal((size, size, 3)) * 40.0
    noise = cv2.GaussianBlur(noise, (0, 0), sigmaX=size / 32.0)
    rows = np.arange(size)[:, None, None]
    period = rng.uniform(size / 8.0, size / 2.0)
    stripes = 10.0 * np.sin(2.0 * math.pi * rows / period + rng.uniform(0, 2 * math.pi))
    return np.clip(base + noise + stripes, 60.0, 180.0)


def _quad(rng: np.random.Generator, size: int, band_top: int, band: int) -> Polygon:
    height = rng.uniform(16.0, min(48.0, band - 16.0))
    width = min(rng.uniform(1.5 * height, 3.0 * height), size - 16.0)
    angle = math.radians(rng.uniform(-MAX_TILT_DEG, MAX_TILT_DEG))
    corners = np.array([[-width, -height], [width, -height], [width, height], [-width, height]]) / 2.0
    rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    corners = corners @ rotation.T
    extent = corners.max(axis=0)
    if extent[1] * 2 + 8 > band or extent[0] * 2 + 8 > size:
        corners = np.array([[-width, -height], [width, -height], [width, height], [-width, height]]) / 2.0
        extent = corners.max(axis=0)
    cx = rng.uniform(extent[0] + 4, size - extent[0] - 4)
    cy = rng.uniform(band_top + extent[1] + 4, band_top + band - extent[1] - 4)
    # two decimals, so written annotations reproduce the in-memory polygons
    return Polygon.from_points(np.round(corners + [cx, cy], 2))


def synth_sample(rng: np.random.Generator, size: int, instances_per_image: int, name: str) -> SyntheticSample:
    pixels = _background(rng, size)
    band = size // instances_per_image
    polygons = []
    for index in range(instances_per_image):
        poly = _quad(rng, size, index * band, band)
        fill = rng.uniform(0.0, 25.0) if rng.random() < 0.5 else rng.uniform(230.0, 255.0)
        pixels[rasterize([poly], (size, size)).astype(bool)] = fill
        polygons.append(poly)
    return SyntheticSample(name=name, image=Image(np.round(pixels).astype(np.uint8)), polygons=polygons)


def synth_dataset(seed: int, count: int, size: int, instances_per_image: int) -> List[SyntheticSample]:
    """
    `count` images of size x size with `instances_per_image` non-overlapping
    instances each, one per horizontal band. Identical seeds give
    bit-identical output.
    """
    context = ErrorContext(operation="synth_dataset", details={"size": size, "instances": instances_per_image})
    if size <= 0 or size % 32 != 0:
        raise ConfigError(f"Synthetic image size must be a positive multiple of 32, got {size}", context)
    if count < 0:
        raise ConfigError(f"Synthetic image count must be non-negative, got {count}", context)
    if instances_per_image < 1 or size // instances_per_image < MIN_BAND:
        raise ConfigError(f"Cannot fit {instances_per_image} instance(s) into a {size}px image", context)

    rng = np.random.default_rng(seed)
    samples = [synth_sample(rng, size, instances_per_image, f"synth_{index:04d}") for index in range(count)]
    logger.info(f"Generated {count} synthetic image(s) of {size}x{size} (seed {seed})")
    return samples


def write_dataset(samples: List[SyntheticSample], images_dir, annotations_dir) -> None:
    """One PPM and one annotation file per sample, paired by name"""
    images_dir, annotations_dir = Path(images_dir), Path(annotations_dir)
    for sample in samples:
        write_image(sample.image, images_dir / f"{sample.name}.ppm")
        write_annotations(annotations_dir / f"{sample.name}.txt", sample.polygons)
