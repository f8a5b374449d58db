#!/usr/bin/env python3
"""
Run Configuration

Flat ``section.key=value`` configuration files with yaml-typed values.
Every command builds a RunConfig from defaults, an optional file, and
``--set`` overrides, and saves the effective result next to its outputs.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

from src.core.losses import LossConfig
from src.model.std_model import ModelConfig
from src.training.optimizer import TrainConfig
from src.utils.error_handling import ConfigError, DetectorIOError, ErrorContext

logger = logging.getLogger(__name__)

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
MASK_CHOICES = ("coarse", "refined")


@dataclass
class IOConfig:
    """Image normalization and file handling"""
    mean: List[float] = field(default_factory=lambda: list(IMAGENET_MEAN))
    std: List[float] = field(default_factory=lambda: list(IMAGENET_STD))
    short_side: int = 0          # 0 keeps the native size (still padded to a multiple of 32)
    enable_png: bool = False
    log_dir: str = ""
    overlay_color: List[int] = field(default_factory=lambda: [0, 255, 0])


@dataclass
class PostConfig:
    """Inference post-processing beyond the model section's threshold/min_area/beta"""
    mask: str = "refined"
    simplify_epsilon: float = 0.5


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    dont_care_threshold: float = 0.5


SECTIONS = ("model", "loss", "train", "io", "post", "eval")


@dataclass
class RunConfig:
    """All settings of one run, grouped by section"""
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    io: IOConfig = field(default_factory=IOConfig)
    post: PostConfig = field(default_factory=PostConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = ()) -> "RunConfig":
        """Defaults, then the file at `path`, then `key=value` overrides"""
        config = cls()
        if path:
            config.apply_file(path)
        config.apply_overrides(overrides)
        config.validate()
        return config

    def apply_file(self, path: str) -> None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise DetectorIOError(f"Cannot read config file {path}: {e}", path=str(path), cause=e)

        for line_number, raw_line in enumerate(text.splitlines(), 1):
            line = raw_line.split(" #", 1)[0].strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_number}: expected key=value, got {raw_line!r}",
                                  ErrorContext(operation="load_config", path=str(path)))
            key, value = line.split("=", 1)
            self.set_value(key.strip(), value.strip(), source=f"{path}:{line_number}")
        logger.debug(f"Loaded configuration from {path}")

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"Override must look like section.key=value, got {item!r}",
                                  ErrorContext(operation="load_config"))
            key, value = item.split("=", 1)
            self.set_value(key.strip(), value.strip(), source="--set")

    def set_value(self, key: str, raw: Any, source: str = "") -> None:
        """Set one ``section.key`` from a raw string (or an already typed value)"""
        section_name, _, name = key.partition(".")
        if section_name not in SECTIONS or not name:
            raise ConfigError(f"Unknown config key {key!r} ({source})",
                              ErrorContext(operation="load_config", details={"key": key}))
        section = getattr(self, section_name)
        fields = {f.name: f for f in dataclasses.fields(section)}
        if name not in fields:
            raise ConfigError(f"Unknown config key {key!r} ({source})",
                              ErrorContext(operation="load_config", details={"key": key}))

        value = yaml.safe_load(raw) if isinstance(raw, str) else raw
        setattr(section, name, _coerce(value, fields[name], key))

    def validate(self) -> None:
        """Range checks across all sections"""
        m = self.model
        checks = [
            (m.base_channels >= 4 and m.base_channels % 4 == 0, "model.base_channels must be a positive multiple of 4"),
            (m.fused_width >= 4 and m.fused_width % 4 == 0, "model.fused_width must be a positive multiple of 4"),
            (m.fpn_width >= 1 and m.cpfsm_width >= 1, "model.fpn_width and model.cpfsm_width must be positive"),
            (0.0 < m.gamma < 1.0, "model.gamma must be in (0, 1)"),
            (m.beta >= 0.0, "model.beta must be non-negative"),
            (0.0 < m.threshold < 1.0, "model.threshold must be in (0, 1)"),
            (m.min_area >= 1, "model.min_area must be at least 1"),
            (m.precision in (32, 64), "model.precision must be 32 or 64"),
            (self.train.base_lr >= 0.0, "train.base_lr must be non-negative"),
            (0.0 <= self.train.momentum < 1.0, "train.momentum must be in [0, 1)"),
            (self.train.weight_decay >= 0.0, "train.weight_decay must be non-negative"),
            (self.train.epochs >= 0, "train.epochs must be non-negative"),
            (self.train.batch_size >= 1, "train.batch_size must be at least 1"),
            (self.train.poly_power > 0.0, "train.poly_power must be positive"),
            (self.train.image_size % 32 == 0 and self.train.image_size >= 32,
             "train.image_size must be a positive multiple of 32"),
            (len(self.io.mean) == 3 and len(self.io.std) == 3, "io.mean and io.std need three values"),
            (all(s > 0 for s in self.io.std), "io.std values must be positive"),
            (self.io.short_side >= 0, "io.short_side must be non-negative"),
            (self.post.mask in MASK_CHOICES, f"post.mask must be one of {MASK_CHOICES}"),
            (self.post.simplify_epsilon >= 0.0, "post.simplify_epsilon must be non-negative"),
            (0.0 < self.eval.iou_threshold < 1.0, "eval.iou_threshold must be in (0, 1)"),
            (0.0 < self.eval.dont_care_threshold <= 1.0, "eval.dont_care_threshold must be in (0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message, ErrorContext(operation="validate_config"))
        self.loss.validate()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_lines(self) -> str:
        """Canonical file form: sorted keys, one per line"""
        lines = []
        for section_name in SECTIONS:
            values = dataclasses.asdict(getattr(self, section_name))
            for name in sorted(values):
                lines.append(f"{section_name}.{name}={_format(values[name])}")
        return "\n".join(lines) + "\n"


def _coerce(value: Any, spec: dataclasses.Field, key: str) -> Any:
    expected = spec.type
    error = ConfigError(f"Config key {key!r} expects {getattr(expected, '__name__', expected)}, got {value!r}",
                        ErrorContext(operation="load_config", details={"key": key}))

    if expected is bool:
        if isinstance(value, bool):
            return value
        raise error
    if expected is int:
        if isinstance(value, bool):
            raise error
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise error
    if expected is float:
        if isinstance(value, bool):
            raise error
        if isinstance(value, (int, float)):
            return float(value)
        # YAML 1.1 reads "1e-4" as a string
        try:
            return float(value)
        except (TypeError, ValueError):
            raise error
    if expected is str:
        if value is None:
            return ""
        return str(value)
    if getattr(expected, "__origin__", None) is list:
        if not isinstance(value, list):
            raise error
        item_type = expected.__args__[0]
        try:
            return [item_type(v) for v in value]
        except (TypeError, ValueError):
            raise error
    return value


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)
