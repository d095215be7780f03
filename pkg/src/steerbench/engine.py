"""Numeric substrate contract: forward evaluation, reverse-mode gradients,
finite-difference verification, and exact-round-trip checkpoints.

The substrate is PyTorch on CPU.  Everything the model zoo and the attention
module are allowed to use is enumerated in :func:`layer_vocabulary`; the
gradient of each entry is verified against central differences in float64.

Checkpoint container (``torch.save`` format, version 1)::

    {"format_version": 1,
     "config":        <ModelConfig.to_dict()>,
     "state_dict":    <named parameter/buffer tensors>,
     "extra":         <optional JSON-like metadata>}

Tensors round-trip bit-exactly; loading rebuilds the graph from the stored
config and restores every named tensor.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Callable, Mapping

import torch
from torch import nn

from .errors import ConfigError, StructuralError

CHECKPOINT_VERSION = 1


def forward(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Inference-mode evaluation: deterministic, side-effect free, finite."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x)
    finally:
        model.train(was_training)
    if not torch.isfinite(out).all():
        raise FloatingPointError("forward produced non-finite values")
    return out


def _default_scalar(out: torch.Tensor) -> torch.Tensor:
    return out.sum()


def gradients(
    model: nn.Module,
    x: torch.Tensor,
    wrt: tuple[str, ...] = ("input",),
    scalar_fn: Callable[[torch.Tensor], torch.Tensor] = _default_scalar,
) -> dict:
    """Gradients of a scalar function of the model output.

    ``wrt`` may contain ``"input"`` and/or ``"parameters"``.  Each gradient has
    the shape of its target; a target that the scalar does not reach raises
    StructuralError.
    """
    unknown = set(wrt) - {"input", "parameters"}
    if unknown:
        raise ConfigError(f"unknown gradient targets {sorted(unknown)}")
    x = x.detach().requires_grad_("input" in wrt)
    loss = scalar_fn(model(x))
    if loss.dim() != 0:
        raise StructuralError(f"scalar_fn must reduce to a scalar, got shape {tuple(loss.shape)}")

    targets: list[torch.Tensor] = []
    names: list[str] = []
    if "input" in wrt:
        targets.append(x)
        names.append("input")
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    if "parameters" in wrt:
        targets.extend(p for _, p in params)
        names.extend(n for n, _ in params)
    if not targets:
        return {"parameters": {}} if "parameters" in wrt else {}
    if not loss.requires_grad:
        raise StructuralError(f"no target in {sorted(names)} is reachable from the loss")
    grads = torch.autograd.grad(loss, targets, allow_unused=True)
    for name, g in zip(names, grads):
        if g is None:
            raise StructuralError(f"target {name!r} is not reachable from the loss")

    result: dict = {}
    i = 0
    if "input" in wrt:
        result["input"] = grads[0].detach()
        i = 1
    if "parameters" in wrt:
        result["parameters"] = {n: g.detach() for (n, _), g in zip(params, grads[i:])}
    return result


def finite_difference_check(
    model: nn.Module,
    x: torch.Tensor,
    h: float = 1e-5,
    coords_per_tensor: int = 20,
    seed: int = 0,
    scalar_fn: Callable[[torch.Tensor], torch.Tensor] | None = None,
    wrt: tuple[str, ...] = ("input", "parameters"),
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy of the model.  For each target tensor up to
    ``coords_per_tensor`` coordinates are perturbed by +/-h; the relative
    error denominator is max(|analytic|, |numeric|, 1e-8).  Returns 0.0 when
    there is nothing to check.
    """
    if h <= 0:
        raise ConfigError(f"step size h must be positive, got {h}")
    model = copy.deepcopy(model).double()
    x = x.detach().double()
    gen = torch.Generator().manual_seed(seed)

    def to_scalar(out: torch.Tensor) -> torch.Tensor:
        if scalar_fn is not None:
            return scalar_fn(out)
        # deterministic random probe so every output coordinate matters
        probe_gen = torch.Generator().manual_seed(seed + 1)
        probe = torch.randn(out.shape, generator=probe_gen, dtype=out.dtype)
        return (out * probe).sum()

    def objective(inp: torch.Tensor) -> torch.Tensor:
        return to_scalar(model(inp))

    analytic = gradients(model, x, wrt=wrt, scalar_fn=to_scalar)

    targets: list[tuple[torch.Tensor, torch.Tensor]] = []
    if "input" in wrt:
        targets.append((x, analytic["input"]))
    if "parameters" in wrt:
        by_name = dict(model.named_parameters())
        targets.extend((by_name[n], g) for n, g in analytic["parameters"].items())

    max_err = 0.0
    with torch.no_grad():
        for tensor, grad in targets:
            flat = tensor.reshape(-1)
            n = flat.numel()
            if n == 0:
                continue
            k = min(coords_per_tensor, n)
            idx = torch.randperm(n, generator=gen)[:k]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = objective(x).item()
                flat[i] = orig - h
                f_minus = objective(x).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = grad.reshape(-1)[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                max_err = max(max_err, err)
    return max_err


class _Residual(nn.Module):
    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner

    def forward(self, x):
        return x + self.inner(x)


class _Gated(nn.Module):
    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner

    def forward(self, x):
        return x * self.inner(x)


class _Concat(nn.Module):
    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner

    def forward(self, x):
        return torch.cat([x, self.inner(x)], dim=1)


class _Flatten(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.fc = nn.Linear(in_features, out_features)

    def forward(self, x):
        return self.fc(x.flatten(1))


def layer_vocabulary(eval_mode: bool = True) -> dict[str, nn.Module]:
    """One small module per layer type the model builders may use.

    This is the closed vocabulary the finite-difference gate runs over:
    strided/padded conv, max/avg pooling, global average pooling, batch
    normalization (both modes), ReLU, sigmoid, fully-connected, elementwise
    add and multiply, nearest and bilinear upsampling, concatenation.
    """
    g = torch.Generator().manual_seed(17)

    def conv(in_c, out_c, k, **kw):
        m = nn.Conv2d(in_c, out_c, k, **kw)
        with torch.no_grad():
            m.weight.copy_(torch.randn(m.weight.shape, generator=g) * 0.4)
            m.bias.copy_(torch.randn(m.bias.shape, generator=g) * 0.1)
        return m

    bn_train = nn.BatchNorm2d(3)
    bn_eval = nn.BatchNorm2d(3)
    with torch.no_grad():
        for bn in (bn_train, bn_eval):
            bn.weight.copy_(torch.randn(3, generator=g) * 0.5 + 1.0)
            bn.bias.copy_(torch.randn(3, generator=g) * 0.1)
            bn.running_mean.copy_(torch.randn(3, generator=g) * 0.2)
            bn.running_var.copy_(torch.rand(3, generator=g) + 0.5)
    bn_train.train()
    bn_eval.eval()

    vocab = {
        "conv2d_strided_padded": conv(3, 4, 3, stride=2, padding=1),
        "max_pool": nn.MaxPool2d(2),
        "avg_pool": nn.AvgPool2d(2),
        "global_avg_pool": nn.AdaptiveAvgPool2d(1),
        "batch_norm_train": bn_train,
        "batch_norm_eval": bn_eval,
        "relu": nn.Sequential(conv(3, 3, 1), nn.ReLU()),
        "sigmoid": nn.Sequential(conv(3, 3, 1), nn.Sigmoid()),
        "fully_connected": _Flatten(3 * 8 * 8, 2),
        "elementwise_add": _Residual(conv(3, 3, 3, padding=1)),
        "elementwise_multiply": _Gated(nn.Sequential(conv(3, 3, 1), nn.Sigmoid())),
        "upsample_nearest": nn.Sequential(conv(3, 3, 1), nn.Upsample(scale_factor=2, mode="nearest")),
        "upsample_bilinear": nn.Sequential(
            conv(3, 3, 1), nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        ),
        "concatenate": _Concat(conv(3, 2, 1)),
    }
    if eval_mode:
        for name, m in vocab.items():
            if name != "batch_norm_train":
                m.eval()
    return vocab


def save_checkpoint(path: str | Path, model: nn.Module, extra: Mapping | None = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = dict(extra)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the model recorded in a checkpoint; returns (model, payload)."""
    from .models import ModelConfig, build_model

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    model = build_model(ModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
