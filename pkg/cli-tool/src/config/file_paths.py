#!/usr/bin/env python3
"""
Centralized File Path Configuration

This module defines the canonical output file names for every command so
that training, inference, evaluation and label generation agree on where
each artifact lives.
"""

from pathlib import Path
from typing import Dict, List

# Per-command output file configurations
OUTPUT_FILE_PATHS = {
    'labelgen': {
        'kernel_mask': '{stem}_kernel.pgm',
        'summary': 'labelgen_summary.yaml',
    },

    'train': {
        'weights': 'weights.stdw',
        'checkpoint': 'checkpoint.yaml',
        'loss_curve': 'loss_curve.csv',
        'dataset_images': 'dataset/images',
        'dataset_annotations': 'dataset/annotations',
        'effective_config': 'effective.cfg',
    },

    'infer': {
        'detections': '{stem}.txt',
        'overlay': '{stem}_overlay.ppm',
        'overlay_gray': '{stem}_overlay.pgm',
        'effective_config': 'effective.cfg',
    },

    'eval': {
        'report_text': 'report.txt',
        'report_json': 'report.json',
    },

    'bench': {
        'report_json': 'bench.json',
    },
}

# Image extensions accepted as inputs; PNG only when io.enable_png is set
IMAGE_EXTENSIONS = ('.pgm', '.ppm')
PNG_EXTENSIONS = ('.png',)
ANNOTATION_EXTENSION = '.txt'


def get_output_path(command: str, file_type: str, stem: str = "") -> str:
    """
    Get the output file name for a specific artifact of a command

    Args:
        command: Command name (labelgen, train, infer, eval, bench)
        file_type: Artifact name (weights, detections, ...)
        stem: Image stem for per-image artifacts

    Returns:
        Relative file name

    Raises:
        KeyError: If command or file_type is not found
    """
    if command not in OUTPUT_FILE_PATHS:
        raise KeyError(f"Unknown command: {command}")

    if file_type not in OUTPUT_FILE_PATHS[command]:
        raise KeyError(f"Unknown file type '{file_type}' for command '{command}'")

    pattern = OUTPUT_FILE_PATHS[command][file_type]
    if '{stem}' in pattern and not stem:
        raise KeyError(f"File type '{file_type}' of '{command}' needs an image stem")
    return pattern.format(stem=stem)


def get_all_output_paths(command: str) -> Dict[str, str]:
    """Get all output name patterns for a command"""
    if command not in OUTPUT_FILE_PATHS:
        raise KeyError(f"Unknown command: {command}")

    return OUTPUT_FILE_PATHS[command].copy()


def list_images(directory: Path, enable_png: bool = False) -> List[Path]:
    """Sorted image files of a directory"""
    extensions = IMAGE_EXTENSIONS + (PNG_EXTENSIONS if enable_png else ())
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() in extensions)


def list_text_files(directory: Path) -> List[Path]:
    """Sorted annotation or detection files of a directory"""
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix == ANNOTATION_EXTENSION)


def annotation_for(image_path: Path, annotations_dir: Path) -> Path:
    """Annotation file paired with an image by stem"""
    return Path(annotations_dir) / f"{Path(image_path).stem}{ANNOTATION_EXTENSION}"


def validate_output_consistency() -> List[str]:
    """
    Validate that output names are unique within each command

    Returns:
        List of validation issues
    """
    issues = []

    for command, files in OUTPUT_FILE_PATHS.items():
        seen = {}
        for file_type, pattern in files.items():
            if pattern in seen:
                issues.append(f"Command '{command}' maps both {seen[pattern]} and {file_type} to {pattern}")
            seen[pattern] = file_type

    return issues
