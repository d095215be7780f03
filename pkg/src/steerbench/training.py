"""Training and evaluation under the mean-squared-error objective.

The loss is MSE = (1/n) * sum_i (r_i - rhat_i)^2 over steering angles in
radians.  Evaluation accumulates per-sample squared errors in float64 and
divides once, so the result is independent of batching; training curves are
recorded per epoch and serialize byte-identically for a fixed seed.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import Batch, DatasetIndex, Preprocessor, make_batches
from .engine import CHECKPOINT_VERSION
from .errors import ConfigError, DomainError, EmptyDatasetError, StructuralError, TrainingDivergedError
from .models import batch_to_tensors, check_batch_shape

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    optimizer: str = "adam"  # "adam" or "sgd"
    momentum: float = 0.9
    seed: int = 0
    side_cameras: bool = False
    camera_correction: float = 0.2

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if not 16 <= self.batch_size <= 128:
            log.warning("batch_size %d is outside the tested 16..128 range", self.batch_size)


@dataclass
class TrainingCurve:
    entries: list[tuple[int, float, float]] = field(default_factory=list)

    def append(self, epoch: int, train_mse: float, val_mse: float):
        if self.entries and epoch <= self.entries[-1][0]:
            raise StructuralError(f"epochs must be strictly increasing, got {epoch}")
        for name, v in (("train_mse", train_mse), ("val_mse", val_mse)):
            if not (math.isfinite(v) and v >= 0):
                raise StructuralError(f"{name} must be finite and >= 0, got {v!r}")
        self.entries.append((epoch, train_mse, val_mse))

    def final_val_mse(self) -> float:
        return self.entries[-1][2]

    def to_csv(self, path: str | Path):
        with open(path, "w") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for epoch, train_mse, val_mse in self.entries:
                fh.write(f"{epoch},{train_mse!r},{val_mse!r}\n")

    def to_jsonl(self, path: str | Path):
        with open(path, "w") as fh:
            for epoch, train_mse, val_mse in self.entries:
                fh.write(json.dumps({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse}) + "\n")

    @staticmethod
    def from_csv(path: str | Path) -> "TrainingCurve":
        curve = TrainingCurve()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("epoch"):
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise StructuralError(f"{path}:{lineno}: expected 3 columns")
                epoch, train_mse, val_mse = int(parts[0]), float(parts[1]), float(parts[2])
                if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
                    raise StructuralError(f"{path}:{lineno}: non-finite MSE value")
                curve.append(epoch, train_mse, val_mse)
        return curve


def mse_loss(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean squared error between predicted and actual angles (radians)."""
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise StructuralError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise StructuralError("mse_loss of empty sequences is undefined")
    return float(np.mean((a - p) ** 2))


def improvement_percent(baseline_mse: float, variant_mse: float) -> float:
    """Percent reduction of the variant's MSE relative to the baseline."""
    if baseline_mse <= 0:
        raise DomainError(f"baseline MSE must be positive, got {baseline_mse}")
    return 100.0 * (baseline_mse - variant_mse) / baseline_mse


def _as_batches(
    model, data, batch_size: int, preprocess: Preprocessor | None
) -> Iterable[Batch]:
    if isinstance(data, Batch):
        return [data]
    if isinstance(data, DatasetIndex):
        preprocess = preprocess or Preprocessor(model.config.input_shape)
        return make_batches(data, batch_size, shuffle_seed=None, preprocess=preprocess)
    return data


def evaluate(
    model,
    data: DatasetIndex | Batch | Iterable[Batch],
    batch_size: int = 32,
    preprocess: Preprocessor | None = None,
) -> float:
    """Full-dataset MSE, batched but batch-size independent."""
    was_training = model.training
    model.eval()
    total_sq = 0.0
    total_n = 0
    try:
        with torch.no_grad():
            for batch in _as_batches(model, data, batch_size, preprocess):
                check_batch_shape(model, batch)
                x, y = batch_to_tensors(batch)
                out = model(x).reshape(-1)
                err = (out.double() - y.double()) ** 2
                total_sq += float(err.sum())
                total_n += batch.n
    finally:
        model.train(was_training)
    if total_n == 0:
        raise EmptyDatasetError("evaluate received no samples")
    return total_sq / total_n


def _make_optimizer(model, hyper: TrainHyper) -> torch.optim.Optimizer:
    if hyper.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=hyper.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=hyper.learning_rate, momentum=hyper.momentum)


def train(
    model,
    train_data: DatasetIndex,
    val_data: DatasetIndex,
    hyper: TrainHyper,
    preprocess: Preprocessor | None = None,
) -> tuple[object, TrainingCurve, dict]:
    """One optimizer pass per epoch; returns (model, curve, best-val checkpoint).

    The checkpoint payload holds the weights of the epoch with the lowest
    validation MSE, ready for ``torch.save``.  A non-finite training loss
    aborts with the offending epoch and batch.  A zero learning rate
    degenerates to pure measurement passes: no weight updates and no
    normalization-statistics drift, so the curve is exactly flat.
    """
    hyper.validate()
    if len(train_data) == 0 or len(val_data) == 0:
        raise EmptyDatasetError("train and validation sets must be nonempty")
    preprocess = preprocess or Preprocessor(model.config.input_shape)
    torch.manual_seed(hyper.seed)
    optimizer = _make_optimizer(model, hyper)
    curve = TrainingCurve()
    best_val = math.inf
    best_state: dict | None = None
    best_epoch = 0

    updating = hyper.learning_rate > 0
    for epoch in range(1, hyper.epochs + 1):
        model.train(updating)
        epoch_sq = 0.0
        epoch_n = 0
        batches = make_batches(
            train_data,
            hyper.batch_size,
            shuffle_seed=hyper.seed * 100003 + epoch,
            preprocess=preprocess,
            side_cameras=hyper.side_cameras,
            correction=hyper.camera_correction,
        )
        for batch_idx, batch in enumerate(batches):
            check_batch_shape(model, batch)
            x, y = batch_to_tensors(batch)
            if updating:
                out = model(x).reshape(-1)
                loss = F.mse_loss(out, y)
            else:
                with torch.no_grad():
                    out = model(x).reshape(-1)
                    loss = F.mse_loss(out, y)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(epoch, batch_idx, loss_value)
            if updating:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            epoch_sq += loss_value * batch.n
            epoch_n += batch.n
        train_mse = epoch_sq / epoch_n
        val_mse = evaluate(model, val_data, hyper.batch_size, preprocess)
        curve.append(epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    checkpoint = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": best_state,
        "extra": {"best_epoch": best_epoch, "best_val_mse": best_val},
    }
    return model, curve, checkpoint
