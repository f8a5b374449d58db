"""
Training loop: seeded shuffling and horizontal flips, fixed-size resize,
poly learning-rate schedule, SGD, per-step loss records and checkpoints.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config.file_paths import annotation_for, get_output_path, list_images
from src.core.losses import LossConfig, total_loss
from src.core.tensor import Tensor
from src.geometry.annotations import read_annotations, split_instances
from src.geometry.labels import make_kernel_label
from src.geometry.polygon import Polygon
from src.imageio.netpbm import Image, read_image
from src.imageio.transforms import plan_resize, to_tensor
from src.model.std_model import StdModel
from src.training.checkpoint import save_checkpoint
from src.training.optimizer import SGD, TrainConfig, poly_lr
from src.training.synthetic import SyntheticSample
from src.utils.error_handling import DivergenceError, ErrorContext, NumericalError
from src.utils.fileio import atomic_write_text
from src.utils.run_logger import history_step_recorder

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "lr", "total", "coarse", "refined", "alpha")


@dataclass
class TrainingSample:
    name: str
    image: Image
    polygons: List[Polygon]
    dont_care: List[np.ndarray] = field(default_factory=list)


@dataclass
class StepRecord:
    step: int
    lr: float
    total: float
    coarse: float
    refined: Optional[float]
    alpha: Optional[float]

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {"step": self.step, "lr": self.lr, "total": self.total, "coarse": self.coarse,
                "refined": self.refined, "alpha": self.alpha}


@dataclass
class TrainResult:
    model: StdModel
    history: List[StepRecord]
    steps: int
    checksum: str
    checkpoint: Optional[Path] = None

    def summary(self) -> dict:
        last = self.history[-1] if self.history else None
        return {"steps": self.steps, "final_loss": last.total if last else None,
                "alpha": self.model.alpha_value(), "checksum": self.checksum,
                "checkpoint": str(self.checkpoint) if self.checkpoint else None}


def from_synthetic(samples: Sequence[SyntheticSample]) -> List[TrainingSample]:
    return [TrainingSample(name=s.name, image=s.image, polygons=list(s.polygons)) for s in samples]


def load_dataset(data_dir, enable_png: bool = False) -> List[TrainingSample]:
    """Images from data_dir/images paired by stem with data_dir/annotations/*.txt"""
    data_dir = Path(data_dir)
    samples = []
    for image_path in list_images(data_dir / "images", enable_png):
        instances = read_annotations(annotation_for(image_path, data_dir / "annotations"))
        texts, ignored, _ = split_instances(instances)
        samples.append(TrainingSample(name=image_path.stem, image=read_image(image_path, enable_png),
                                      polygons=texts, dont_care=ignored))
    logger.info(f"Loaded {len(samples)} training image(s) from {data_dir}")
    return samples


def flip_sample(sample: TrainingSample) -> TrainingSample:
    """Mirror image and annotations about the vertical center line"""
    width = sample.image.width

    def mirror(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([width - points[:, 0], points[:, 1]])

    return TrainingSample(name=sample.name, image=Image(sample.image.data[:, ::-1]),
                          polygons=[Polygon.from_points(mirror(p.vertices)) for p in sample.polygons],
                          dont_care=[mirror(p) for p in sample.dont_care])


def write_loss_curve(path, history: Sequence[StepRecord]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in history:
        writer.writerow(["" if v is None else repr(v) for v in (record.step, record.lr, record.total,
                                                               record.coarse, record.refined, record.alpha)])
    atomic_write_text(path, buffer.getvalue())


class Trainer:
    """Single-writer loop over an in-memory dataset"""

    def __init__(self, model: StdModel, samples: Sequence[TrainingSample], train_cfg: TrainConfig,
                 loss_cfg: LossConfig, mean: Sequence[float], std: Sequence[float], out_dir=None):
        self.model = model
        self.samples = list(samples)
        self.cfg = train_cfg
        self.loss_cfg = loss_cfg
        self.mean, self.std = list(mean), list(std)
        self.out_dir = Path(out_dir) if out_dir else None
        self.history: List[StepRecord] = []
        self._cache: Dict[Tuple[int, bool], Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.optimizer = SGD(model.parameters(), train_cfg, no_decay=model.no_decay_names())

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.samples) / self.cfg.batch_size) if self.samples else 0

    def total_steps(self) -> int:
        if self.cfg.max_steps > 0:
            return self.cfg.max_steps if self.samples else 0
        return self.cfg.epochs * self.batches_per_epoch

    def prepare(self, index: int, flipped: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input (3,S,S), kernel (S,S), ignore (S,S)) for one sample, cached"""
        key = (index, flipped)
        if key not in self._cache:
            sample = self.samples[index]
            if flipped:
                sample = flip_sample(sample)
            plan = plan_resize(sample.image.height, sample.image.width, fixed_size=self.cfg.image_size)
            polys = [plan.to_input(p) for p in sample.polygons]
            sx, sy = plan.scale
            ignored = [np.asarray(p, dtype=np.float64).reshape(-1, 2) * [sx, sy] + [plan.pad_left, plan.pad_top]
                       for p in sample.dont_care]
            label = make_kernel_label(polys, self.model.config.gamma, plan.padded, dont_care=ignored)
            image = to_tensor(sample.image, plan, self.mean, self.std).data[0]
            self._cache[key] = (image, label.mask, label.ignore)
        return self._cache[key]

    def schedule(self) -> List[List[Tuple[int, bool]]]:
        """Seeded batch order with flip decisions for every step"""
        rng = np.random.default_rng(self.cfg.seed)
        total, batches = self.total_steps(), []
        while len(batches) < total:
            order = rng.permutation(len(self.samples))
            flips = rng.random(len(self.samples)) < 0.5 if self.cfg.flip else np.zeros(len(self.samples), bool)
            for start in range(0, len(order), self.cfg.batch_size):
                chunk = order[start:start + self.cfg.batch_size]
                batches.append([(int(i), bool(flips[i])) for i in chunk])
        return batches[:total]

    def _batch(self, items: List[Tuple[int, bool]]):
        prepared = [self.prepare(index, flipped) for index, flipped in items]
        images = np.stack([p[0] for p in prepared]).astype(self.model.dtype)
        kernel = np.stack([p[1] for p in prepared])[:, None].astype(self.model.dtype)
        ignore = np.stack([p[2] for p in prepared])[:, None].astype(self.model.dtype)
        return Tensor(images, dtype=self.model.dtype), kernel, ignore

    def train_step(self, step: int, total: int, items: List[Tuple[int, bool]]) -> StepRecord:
        lr = poly_lr(step, total, self.cfg)
        images, kernel, ignore = self._batch(items)
        self.model.train()
        self.optimizer.zero_grad()
        out = self.model(images)
        losses = total_loss(out.coarse, out.refined, kernel, ignore, self.loss_cfg)
        value = float(losses.total.data.sum())
        if not math.isfinite(value):
            raise NumericalError(f"Non-finite loss {value}", ErrorContext(operation="train_step"))
        losses.total.backward()
        self.optimizer.step(lr)
        return StepRecord(step=step + 1, lr=lr, total=value, coarse=losses.coarse, refined=losses.refined,
                          alpha=self.model.alpha_value())

    def _snapshot_buffers(self) -> Dict[str, np.ndarray]:
        return {name: buffer.copy() for name, buffer in self.model.named_buffers()}

    def _restore_buffers(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, buffer in self.model.named_buffers():
            buffer[...] = snapshot[name]

    def _checkpoint(self, step: int) -> Optional[Path]:
        if self.out_dir is None:
            return None
        path = save_checkpoint(self.out_dir, self.model, self.cfg, self.loss_cfg, step,
                               [r.to_dict() for r in self.history])
        write_loss_curve(self.out_dir / get_output_path("train", "loss_curve"), self.history)
        return path

    def run(self) -> TrainResult:
        total = self.total_steps()
        logger.info(f"Training {total} step(s) on {len(self.samples)} image(s), "
                    f"batch {self.cfg.batch_size}, base lr {self.cfg.base_lr}")

        for step, items in enumerate(self.schedule()):
            buffers = self._snapshot_buffers()
            try:
                record = self.train_step(step, total, items)
            except NumericalError as e:
                # parameters are untouched by a failed step; its forward pass already moved the BN statistics
                self._restore_buffers(buffers)
                path = self._checkpoint(step)
                logger.warning(f"Training diverged at step {step + 1}: {e.message}")
                raise DivergenceError(f"Training diverged at step {step + 1}: {e.message}", step=step + 1,
                                      last_good_checkpoint=str(path) if path else None, cause=e)
            self.history.append(record)
            history_step_recorder(record.step, record.to_dict())
            if self.cfg.log_every > 0 and (record.step % self.cfg.log_every == 0 or record.step == total):
                logger.info(f"step {record.step}/{total} lr {record.lr:.6f} loss {record.total:.5f} "
                            f"(coarse {record.coarse:.5f}, refined {record.refined}) alpha {record.alpha}")
            if self.cfg.checkpoint_every > 0 and record.step % self.cfg.checkpoint_every == 0 and record.step < total:
                self._checkpoint(record.step)

        path = self._checkpoint(total)
        checksum = self.model.checksum()
        logger.info(f"Training finished after {total} step(s), parameter checksum {checksum}")
        return TrainResult(model=self.model, history=self.history, steps=total, checksum=checksum, checkpoint=path)


def train(model: StdModel, samples: Sequence[TrainingSample], train_cfg: TrainConfig, loss_cfg: LossConfig,
          mean: Sequence[float], std: Sequence[float], out_dir=None) -> TrainResult:
    return Trainer(model, samples, train_cfg, loss_cfg, mean, std, out_dir).run()
