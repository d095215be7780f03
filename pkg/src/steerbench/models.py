"""ResNet and InceptionNet steering-angle regressors built from block-layer tuples.

Both families end in global average pooling and a single linear output (the
steering angle in radians, which may be negative, so there is no final
nonlinearity).  Residual networks use basic two-conv blocks with stage widths
64/128/256/512; the Inception family uses one branch-width template scaled by
per-stage widths 512/768/1152 plus a 1x1 expansion conv before the head,
calibrated so the configured block tuples span roughly 13M to 22M parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch
from torch import nn

from .data import Batch
from .errors import ConfigError, StructuralError

RESNET_STAGE_WIDTHS = (64, 128, 256, 512)
INCEPTION_STAGE_WIDTHS = (512, 768, 1152)
INCEPTION_EXPANSION = 4608

#: Table of ResNet block-layer tuples, smallest to largest.
RESNET_BLOCK_LAYERS = {
    "resnet20": (2, 2, 3, 2),
    "resnet22": (2, 3, 3, 2),
    "resnet24": (2, 3, 4, 2),
    "resnet26": (3, 3, 3, 3),
    "resnet28": (3, 3, 4, 3),
    "resnet30": (3, 4, 4, 3),
    "resnet32": (3, 4, 5, 3),
    "resnet34": (3, 4, 6, 3),
}

#: Inception block-layer tuples, smallest to largest.
INCEPTION_BLOCK_LAYERS = {
    "inception": (2, 5, 2),
    "inception_a": (5, 5, 2),
    "inception_b": (2, 8, 2),
    "inception_c": (5, 8, 2),
    "inception_d": (2, 5, 5),
    "inception_e": (2, 8, 5),
    "inception_f": (5, 8, 5),
}


@dataclass(frozen=True)
class AttentionSettings:
    """Placement and shape of attention modules inside a ResNet."""

    stages: tuple[int, ...] = (1, 2, 3)
    combine_rule: str = "mask_times_trunk"
    downsample_steps: int = 2
    trunk_units: int = 1
    skip_connections: bool = True

    def validate(self):
        if self.combine_rule not in ("mask_times_trunk", "residual_one_plus_mask"):
            raise ConfigError(f"unknown combine rule {self.combine_rule!r}")
        if self.downsample_steps < 0:
            raise ConfigError("downsample_steps must be >= 0")
        if self.trunk_units < 1:
            raise ConfigError("trunk_units must be >= 1")
        if not self.stages:
            return
        if any(s < 1 or s > 4 for s in self.stages) or len(set(self.stages)) != len(self.stages):
            raise ConfigError(f"attention stages must be distinct indices in 1..4, got {self.stages}")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    block_layers: tuple[int, ...]
    stage_widths: tuple[int, ...] | None = None
    input_shape: tuple[int, int] = (160, 320)  # (H, W)
    head: str = "gap_linear"
    seed: int = 0
    attention: AttentionSettings | None = None

    def validate(self):
        if self.family == "resnet":
            expected = 4
        elif self.family == "inception":
            expected = 3
            if self.attention is not None:
                raise ConfigError("attention is only supported for the resnet family")
        else:
            raise ConfigError(f"unknown family {self.family!r}")
        if len(self.block_layers) != expected or any(b < 1 for b in self.block_layers):
            raise ConfigError(
                f"{self.family} block_layers must be a {expected}-tuple of positive counts, "
                f"got {self.block_layers}"
            )
        widths = self.widths()
        if len(widths) != expected or any(w < 1 for w in widths):
            raise ConfigError(f"stage_widths must be {expected} positive ints, got {widths}")
        if self.family == "inception" and any(w % 16 for w in widths):
            raise ConfigError(f"inception stage widths must be divisible by 16, got {widths}")
        if self.head != "gap_linear":
            raise ConfigError(f"unknown head {self.head!r}")
        h, w = self.input_shape
        if h < 32 or w < 32:
            raise ConfigError(f"input shape must be at least 32x32, got {self.input_shape}")
        if self.attention is not None:
            self.attention.validate()

    def widths(self) -> tuple[int, ...]:
        if self.stage_widths is not None:
            return tuple(self.stage_widths)
        return RESNET_STAGE_WIDTHS if self.family == "resnet" else INCEPTION_STAGE_WIDTHS

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "block_layers": list(self.block_layers),
            "stage_widths": list(self.widths()),
            "input_shape": list(self.input_shape),
            "head": self.head,
            "seed": self.seed,
        }
        if self.attention is not None:
            d["attention"] = {
                "stages": list(self.attention.stages),
                "combine_rule": self.attention.combine_rule,
                "downsample_steps": self.attention.downsample_steps,
                "trunk_units": self.attention.trunk_units,
                "skip_connections": self.attention.skip_connections,
            }
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        attention = None
        if d.get("attention") is not None:
            a = d["attention"]
            attention = AttentionSettings(
                stages=tuple(a["stages"]),
                combine_rule=a["combine_rule"],
                downsample_steps=a["downsample_steps"],
                trunk_units=a["trunk_units"],
                skip_connections=a["skip_connections"],
            )
        return ModelConfig(
            family=d["family"],
            block_layers=tuple(d["block_layers"]),
            stage_widths=tuple(d["stage_widths"]) if d.get("stage_widths") else None,
            input_shape=tuple(d["input_shape"]),
            head=d.get("head", "gap_linear"),
            seed=d.get("seed", 0),
            attention=attention,
        )


class BasicBlock(nn.Module):
    """Two 3x3 convs with an identity shortcut; the unit counted for parity."""

    def __init__(self, in_channels: int, channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)
        self.relu = nn.ReLU()
        if stride != 1 or in_channels != channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(channels),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.widths()
        self.stem = nn.Sequential(
            nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        in_c = widths[0]
        for i, (w, n) in enumerate(zip(widths, config.block_layers), start=1):
            blocks = []
            for b in range(n):
                stride = 2 if (i > 1 and b == 0) else 1
                blocks.append(BasicBlock(in_c, w, stride=stride))
                in_c = w
            setattr(self, f"layer{i}", nn.Sequential(*blocks))
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(widths[-1], 1)
        init_parameters(self, config.seed)

    def layer_map(self) -> dict[str, nn.Module]:
        return {"stem": self.stem, "layer1": self.layer1, "layer2": self.layer2,
                "layer3": self.layer3, "layer4": self.layer4}

    def forward(self, x):
        x = self.stem(x)
        x = self.layer1(x)
        x = self.layer2(x)
        x = self.layer3(x)
        x = self.layer4(x)
        x = self.avgpool(x).flatten(1)
        return self.fc(x)


def _conv_bn(in_c: int, out_c: int, kernel: int, **kw) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, kernel, bias=False, **kw),
        nn.BatchNorm2d(out_c),
        nn.ReLU(),
    )


class InceptionBlock(nn.Module):
    """Parallel 1x1 / 3x3 / 5x5 / pooled branches concatenated to ``width`` channels.

    Branch widths are fixed fractions of ``width``: 1/4 for the 1x1 branch,
    1/8 reduce -> 1/2 for 3x3, 1/16 reduce -> 1/8 for 5x5, 1/8 pool projection.
    """

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        if width % 16:
            raise ConfigError(f"inception block width must be divisible by 16, got {width}")
        self.branch1 = _conv_bn(in_channels, width // 4, 1)
        self.branch3 = nn.Sequential(
            _conv_bn(in_channels, width // 8, 1),
            _conv_bn(width // 8, width // 2, 3, padding=1),
        )
        self.branch5 = nn.Sequential(
            _conv_bn(in_channels, width // 16, 1),
            _conv_bn(width // 16, width // 8, 5, padding=2),
        )
        self.branch_pool = nn.Sequential(
            nn.MaxPool2d(3, stride=1, padding=1),
            _conv_bn(in_channels, width // 8, 1),
        )

    def forward(self, x):
        return torch.cat(
            [self.branch1(x), self.branch3(x), self.branch5(x), self.branch_pool(x)], dim=1
        )


class InceptionNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.widths()
        self.stem = nn.Sequential(
            _conv_bn(3, 64, 7, stride=2, padding=3),
            nn.MaxPool2d(3, stride=2, padding=1),
            _conv_bn(64, 64, 1),
            _conv_bn(64, 192, 3, padding=1),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        in_c = 192
        for i, (w, n) in enumerate(zip(widths, config.block_layers), start=1):
            blocks = []
            for _ in range(n):
                blocks.append(InceptionBlock(in_c, w))
                in_c = w
            setattr(self, f"stage{i}", nn.Sequential(*blocks))
        self.expand = _conv_bn(in_c, INCEPTION_EXPANSION, 1)
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(INCEPTION_EXPANSION, 1)
        init_parameters(self, config.seed)

    def layer_map(self) -> dict[str, nn.Module]:
        return {"stem": self.stem, "stage1": self.stage1, "stage2": self.stage2,
                "stage3": self.stage3}

    def forward(self, x):
        x = self.pool(self.stem(x))
        x = self.stage1(x)
        x = self.pool(x)
        x = self.stage2(x)
        x = self.pool(x)
        x = self.stage3(x)
        x = self.expand(x)
        x = self.avgpool(x).flatten(1)
        return self.fc(x)


def init_parameters(model: nn.Module, seed: int):
    """Fan-in-scaled normal weights, zero biases, unit batchnorm, fixed seed."""
    gen = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.Linear):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) / math.sqrt(m.in_features))
                m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)


def build_resnet(
    block_layers: Iterable[int],
    stage_widths: Iterable[int] | None = None,
    input_shape: tuple[int, int] = (160, 320),
    seed: int = 0,
) -> ResNet:
    config = ModelConfig(
        family="resnet",
        block_layers=tuple(block_layers),
        stage_widths=tuple(stage_widths) if stage_widths is not None else None,
        input_shape=tuple(input_shape),
        seed=seed,
    )
    return ResNet(config)


def build_inception(
    block_layers: Iterable[int],
    input_shape: tuple[int, int] = (160, 320),
    stage_widths: Iterable[int] | None = None,
    seed: int = 0,
) -> InceptionNet:
    config = ModelConfig(
        family="inception",
        block_layers=tuple(block_layers),
        stage_widths=tuple(stage_widths) if stage_widths is not None else None,
        input_shape=tuple(input_shape),
        seed=seed,
    )
    return InceptionNet(config)


def build_model(config: ModelConfig) -> nn.Module:
    """Construct any configured model, attention variants included."""
    config.validate()
    if config.family == "inception":
        return InceptionNet(config)
    if config.attention is not None and config.attention.stages:
        from .attention import build_attention_resnet

        return build_attention_resnet(config)
    return ResNet(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def residual_unit_count(model: nn.Module) -> int:
    """Number of basic residual units anywhere in the model, trunks included."""
    return sum(1 for m in model.modules() if isinstance(m, BasicBlock))


def batch_to_tensors(batch: Batch, dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Convert an N,H,W,3 Batch to NCHW images and a target vector."""
    x = torch.from_numpy(np.ascontiguousarray(batch.images.transpose(0, 3, 1, 2))).to(dtype)
    y = torch.from_numpy(np.ascontiguousarray(batch.targets)).to(dtype)
    return x, y


def check_batch_shape(model: nn.Module, batch: Batch):
    h, w = model.config.input_shape
    if batch.images.shape[1:3] != (h, w):
        raise StructuralError(
            f"batch images are {batch.images.shape[1:3]}, model expects {(h, w)}"
        )


def predict_angle(model: nn.Module, batch: Batch) -> np.ndarray:
    """Per-sample steering predictions in radians, shape (N,)."""
    check_batch_shape(model, batch)
    x, _ = batch_to_tensors(batch)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x)
    finally:
        model.train(was_training)
    out = out.reshape(batch.n).numpy()
    if not np.all(np.isfinite(out)):
        raise StructuralError("model produced non-finite predictions")
    return out
