"""
Checkpoints: a weights container plus a YAML manifest with the training
configuration, step count, loss history, alpha and parameter checksum.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from src.config.file_paths import get_output_path
from src.core.losses import LossConfig
from src.model.std_model import ModelConfig, StdModel
from src.model.weights_io import load_weights, save_weights
from src.training.optimizer import TrainConfig
from src.utils.error_handling import CheckpointError, ErrorContext
from src.utils.fileio import atomic_write_text, read_bytes

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "std-checkpoint"


def save_checkpoint(out_dir, model: StdModel, train_cfg: TrainConfig, loss_cfg: LossConfig, step: int,
                    history: Optional[List[Dict[str, float]]] = None) -> Path:
    """Write weights.stdw and checkpoint.yaml into out_dir; returns the manifest path"""
    out_dir = Path(out_dir)
    weights_path = out_dir / get_output_path("train", "weights")
    manifest_path = out_dir / get_output_path("train", "checkpoint")
    model_section = dataclasses.asdict(model.config)
    checksum = model.checksum()

    save_weights(weights_path, model.state_dict(), extra={"model": model_section, "step": step})
    manifest = {
        "format": MANIFEST_FORMAT,
        "weights": weights_path.name,
        "step": step,
        "alpha": model.alpha_value(),
        "checksum": checksum,
        "model": model_section,
        "train": dataclasses.asdict(train_cfg),
        "loss": dataclasses.asdict(loss_cfg),
        "loss_history": list(history or []),
    }
    atomic_write_text(manifest_path, yaml.safe_dump(manifest, sort_keys=True, default_flow_style=False))
    logger.info(f"Checkpoint at step {step} written to {out_dir} (checksum {checksum[:12]})")
    return manifest_path


def _resolve(path) -> Tuple[Path, Optional[Path]]:
    """(weights file, manifest or None) for a directory, a manifest or a weights file"""
    path = Path(path)
    if path.is_dir():
        manifest = path / get_output_path("train", "checkpoint")
        return path / get_output_path("train", "weights"), manifest if manifest.exists() else None
    if path.suffix in (".yaml", ".yml"):
        return path.parent / get_output_path("train", "weights"), path
    return path, None


def read_manifest(path) -> dict:
    try:
        manifest = yaml.safe_load(read_bytes(path).decode("utf-8"))
    except yaml.YAMLError as e:
        raise CheckpointError(f"{path}: manifest is not valid YAML: {e}", path=str(path), cause=e)
    if not isinstance(manifest, dict) or manifest.get("format") != MANIFEST_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint manifest", path=str(path))
    return manifest


def model_config_from(section: dict, fallback: Optional[ModelConfig] = None) -> ModelConfig:
    """ModelConfig from a stored section; unknown keys are rejected"""
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise CheckpointError(f"Checkpoint model section has unknown keys: {', '.join(unknown)}",
                              context=ErrorContext(operation="load_checkpoint"))
    base = dataclasses.asdict(fallback) if fallback else {}
    base.update(section)
    return ModelConfig(**base)


def load_checkpoint(path, fallback: Optional[ModelConfig] = None) -> Tuple[StdModel, dict]:
    """
    Rebuild the model stored at `path` (checkpoint directory, manifest or
    bare weights file). The architecture comes from the checkpoint; the
    fallback config only fills what the checkpoint does not record.
    """
    weights_path, manifest_path = _resolve(path)
    state, weights_manifest = load_weights(weights_path)
    manifest = read_manifest(manifest_path) if manifest_path else {}

    section = manifest.get("model") or weights_manifest.get("extra", {}).get("model")
    if section is None and fallback is None:
        raise CheckpointError(f"{weights_path}: no model configuration stored with the weights",
                              path=str(weights_path))
    config = model_config_from(section or {}, fallback)
    model = StdModel(config)
    model.load_state_dict(state)
    model.eval()
    logger.info(f"Loaded checkpoint {weights_path} ({len(state)} tensors)")
    return model, manifest
