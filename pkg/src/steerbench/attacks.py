"""FGSM and PGD adversarial attacks against steering regressors.

Both attacks maximize the MSE of the predicted angle under an L-infinity
pixel budget.  FGSM takes the single step ``x + eps * sign(grad)``; PGD
iterates smaller steps and projects every iterate back into the eps-ball
intersected with the pixel bounds.  ``pgd`` with one step of size eps and no
random start reproduces ``fgsm`` elementwise.  Attacks never touch the model
parameters or the batch targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .data import Batch, DatasetIndex, Preprocessor, make_batches
from .errors import ConfigError, DomainError, StructuralError
from .models import batch_to_tensors, check_batch_shape
from .training import evaluate

PIXEL_BOUNDS = (0.0, 1.0)


@dataclass(frozen=True)
class AttackConfig:
    method: str  # "fgsm" or "pgd"
    epsilon: float
    steps: int = 10
    step_size: float | None = None  # defaults to epsilon / 4
    random_start: bool = True
    bounds: tuple[float, float] = PIXEL_BOUNDS

    def validate(self):
        if self.method not in ("fgsm", "pgd"):
            raise ConfigError(f"unknown attack method {self.method!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.bounds[0] >= self.bounds[1]:
            raise ConfigError(f"bounds must be an increasing pair, got {self.bounds}")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4.0


def _input_gradient(model, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    x = x.detach().requires_grad_(True)
    out = model(x).reshape(-1)
    loss = ((out - y) ** 2).mean()
    (grad,) = torch.autograd.grad(loss, x)
    return grad.detach()


def _check_bounds(batch: Batch, bounds: tuple[float, float]):
    lo, hi = bounds
    if batch.images.min() < lo or batch.images.max() > hi:
        raise StructuralError(f"batch pixels fall outside bounds {bounds}")


def fgsm(
    model,
    batch: Batch,
    epsilon: float,
    bounds: tuple[float, float] = PIXEL_BOUNDS,
) -> Batch:
    """Single-step sign attack: clip(x + eps * sign(grad_x MSE), bounds).

    sign(0) = 0, so coordinates with zero gradient are left untouched;
    targets are returned unchanged.
    """
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    check_batch_shape(model, batch)
    _check_bounds(batch, bounds)
    x, y = batch_to_tensors(batch)
    was_training = model.training
    model.eval()
    try:
        grad = _input_gradient(model, x, y)
        adv = torch.clamp(x + epsilon * torch.sign(grad), bounds[0], bounds[1])
    finally:
        model.train(was_training)
    images = adv.numpy().transpose(0, 2, 3, 1)
    return Batch(np.ascontiguousarray(images), batch.targets.copy())


def pgd(model, batch: Batch, config: AttackConfig, generator: torch.Generator | None = None) -> Batch:
    """Iterated sign steps projected onto the eps-ball around x and the bounds.

    The optional uniform random start draws from the given torch generator,
    so a seeded generator makes the attack reproducible.
    """
    config.validate()
    if config.method != "pgd":
        raise ConfigError(f"pgd called with method {config.method!r}")
    check_batch_shape(model, batch)
    _check_bounds(batch, config.bounds)
    lo, hi = config.bounds
    eps = config.epsilon
    x, y = batch_to_tensors(batch)
    adv = x.clone()
    if config.random_start and eps > 0:
        noise = torch.empty_like(adv)
        if generator is not None:
            noise.uniform_(-eps, eps, generator=generator)
        else:
            noise.uniform_(-eps, eps)
        adv = torch.clamp(adv + noise, lo, hi)
    was_training = model.training
    model.eval()
    try:
        for _ in range(config.steps):
            grad = _input_gradient(model, adv, y)
            adv = adv + config.alpha * torch.sign(grad)
            adv = torch.minimum(torch.maximum(adv, x - eps), x + eps)
            adv = torch.clamp(adv, lo, hi)
    finally:
        model.train(was_training)
    images = adv.numpy().transpose(0, 2, 3, 1)
    return Batch(np.ascontiguousarray(images), batch.targets.copy())


def attack_batch(model, batch: Batch, config: AttackConfig, generator: torch.Generator | None = None) -> Batch:
    config.validate()
    if config.method == "fgsm":
        return fgsm(model, batch, config.epsilon, config.bounds)
    return pgd(model, batch, config, generator)


def robustness_eval(
    model,
    data: DatasetIndex | Batch | Iterable[Batch],
    attack_config: AttackConfig,
    batch_size: int = 32,
    preprocess: Preprocessor | None = None,
    seed: int = 0,
) -> float:
    """MSE over adversarial examples generated per batch against this model."""
    attack_config.validate()
    if isinstance(data, Batch):
        batches: Iterable[Batch] = [data]
    elif isinstance(data, DatasetIndex):
        preprocess = preprocess or Preprocessor(model.config.input_shape)
        batches = make_batches(data, batch_size, shuffle_seed=None, preprocess=preprocess)
    else:
        batches = data
    generator = torch.Generator().manual_seed(seed)
    attacked = [attack_batch(model, batch, attack_config, generator) for batch in batches]
    return evaluate(model, attacked)


def robustness_change(mse_without_attention: float, mse_with_attention: float) -> float:
    """Percent MSE reduction attributable to attention under a fixed attack."""
    if mse_without_attention <= 0:
        raise DomainError(f"reference MSE must be positive, got {mse_without_attention}")
    return 100.0 * (mse_without_attention - mse_with_attention) / mse_without_attention


@dataclass(frozen=True)
class ReportEntry:
    model: str
    attack: str
    epsilon: float
    clean_mse: float
    attacked_mse: float

    def __post_init__(self):
        if self.attacked_mse < 0 or self.clean_mse < 0:
            raise StructuralError("MSE values must be >= 0")


@dataclass
class RobustnessReport:
    entries: list[ReportEntry] = field(default_factory=list)

    def add(self, model: str, attack: str, epsilon: float, clean_mse: float, attacked_mse: float):
        self.entries.append(ReportEntry(model, attack, epsilon, clean_mse, attacked_mse))

    def lookup(self, model: str, attack: str, epsilon: float) -> ReportEntry | None:
        for e in self.entries:
            if e.model == model and e.attack == attack and e.epsilon == epsilon:
                return e
        return None

    def columns(self) -> list[tuple[str, float]]:
        """(attack, epsilon) pairs in FGSM-then-PGD order, epsilon ascending."""
        seen = {(e.attack, e.epsilon) for e in self.entries}
        order = {"fgsm": 0, "pgd": 1}
        return sorted(seen, key=lambda c: (order.get(c[0], 99), c[1]))

    def to_csv(self, path: str | Path):
        with open(path, "w") as fh:
            fh.write("model,attack,eps,clean_mse,attacked_mse\n")
            for e in self.entries:
                fh.write(f"{e.model},{e.attack},{e.epsilon!r},{e.clean_mse!r},{e.attacked_mse!r}\n")

    @staticmethod
    def from_csv(path: str | Path) -> "RobustnessReport":
        report = RobustnessReport()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("model,"):
                    continue
                model, attack, eps, clean, attacked = line.split(",")
                report.add(model, attack, float(eps), float(clean), float(attacked))
        return report
