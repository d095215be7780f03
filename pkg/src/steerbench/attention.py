"""Trunk/mask attention modules and their insertion into residual networks.

An attention module splits the incoming features into a trunk branch (plain
residual units) and a mask branch that downsamples, then symmetrically
upsamples back to the trunk resolution.  The decoded mask features are fused
with the trunk output by elementwise addition, squashed through a sigmoid
gate (selection), and finally amplify the trunk: either ``M * T`` or
``(1 + M) * T`` depending on the configured combine rule.

Inserting modules does not change the residual unit count: each module's
trunk takes over the last ``trunk_units`` blocks of its host stage, so an
attention variant and its baseline always report the same unit count.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, StructuralError
from .models import (
    AttentionSettings,
    BasicBlock,
    ModelConfig,
    ResNet,
    init_parameters,
)


def _ceil_half(v: int) -> int:
    return (v + 1) // 2


def stage_spatial(input_shape: tuple[int, int], stage: int) -> tuple[int, int]:
    """Feature-map size at the output of a given residual stage (1-based)."""
    h, w = input_shape
    h, w = _ceil_half(_ceil_half(h)), _ceil_half(_ceil_half(w))  # stem conv + maxpool
    for _ in range(stage - 1):
        h, w = _ceil_half(h), _ceil_half(w)
    return h, w


def max_clean_steps(spatial_shape: tuple[int, int], requested: int) -> int:
    """Largest downsample depth <= requested that divides both dimensions."""
    h, w = spatial_shape
    steps = 0
    while steps < requested and h % 2 == 0 and w % 2 == 0:
        h, w = h // 2, w // 2
        steps += 1
    return steps


class AttentionModule(nn.Module):
    """One fusion/selection/amplification block operating at a fixed resolution."""

    def __init__(self, channels: int, spatial_shape: tuple[int, int], settings: AttentionSettings):
        super().__init__()
        settings.validate()
        h, w = spatial_shape
        scale = 2 ** settings.downsample_steps
        if h % scale or w % scale:
            raise ConfigError(
                f"feature shape {spatial_shape} not divisible by 2^{settings.downsample_steps}"
            )
        self.channels = channels
        self.spatial_shape = (h, w)
        self.combine_rule = settings.combine_rule
        self.skip_connections = settings.skip_connections

        self.trunk = nn.Sequential(
            *[BasicBlock(channels, channels) for _ in range(settings.trunk_units)]
        )

        hidden = max(channels // 4, 8)
        self.mask_entry = self._conv_bn_relu(channels, hidden, 1)
        self.mask_encoder = nn.ModuleList(
            self._conv_bn_relu(hidden, hidden, 3, padding=1)
            for _ in range(settings.downsample_steps)
        )
        self.mask_decoder = nn.ModuleList(
            self._conv_bn_relu(hidden, hidden, 3, padding=1)
            for _ in range(settings.downsample_steps)
        )
        self.mask_pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.mask_project = nn.Sequential(
            nn.Conv2d(hidden, channels, 1, bias=False),
            nn.BatchNorm2d(channels),
        )
        self.select = nn.Conv2d(channels, channels, 1)

    @staticmethod
    def _conv_bn_relu(in_c, out_c, kernel, **kw):
        return nn.Sequential(
            nn.Conv2d(in_c, out_c, kernel, bias=False, **kw),
            nn.BatchNorm2d(out_c),
            nn.ReLU(),
        )

    def _check_input(self, x: torch.Tensor):
        if x.shape[1] != self.channels or tuple(x.shape[2:]) != self.spatial_shape:
            raise StructuralError(
                f"expected features {self.channels}x{self.spatial_shape}, got {tuple(x.shape[1:])}"
            )

    def _mask(self, x: torch.Tensor, trunk_out: torch.Tensor) -> torch.Tensor:
        m = self.mask_entry(x)
        skips = []
        for enc in self.mask_encoder:
            skips.append(m)
            m = enc(self.mask_pool(m))
        for dec, skip in zip(self.mask_decoder, reversed(skips)):
            m = F.interpolate(m, size=skip.shape[2:], mode="bilinear", align_corners=False)
            if self.skip_connections:
                m = m + skip
            m = dec(m)
        fused = self.mask_project(m) + trunk_out
        return torch.sigmoid(self.select(fused))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        t = self.trunk(x)
        m = self._mask(x, t)
        if self.combine_rule == "mask_times_trunk":
            return m * t
        return (1.0 + m) * t

    def extract_mask(self, x: torch.Tensor) -> torch.Tensor:
        """The sigmoid mask for an input, same shape as the trunk output."""
        self._check_input(x)
        with torch.no_grad():
            return self._mask(x, self.trunk(x))


def build_attention_module(
    channels: int,
    spatial_shape: tuple[int, int],
    settings: AttentionSettings | None = None,
    seed: int = 0,
) -> AttentionModule:
    module = AttentionModule(channels, spatial_shape, settings or AttentionSettings())
    init_parameters(module, seed)
    return module


def apply_attention(module: AttentionModule, features: torch.Tensor) -> torch.Tensor:
    return module(features)


def extract_mask(module: AttentionModule, features: torch.Tensor) -> torch.Tensor:
    return module.extract_mask(features)


class AttentionResNet(nn.Module):
    """A basic-block ResNet with attention modules at configured stage outputs."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        if config.attention is None or not config.attention.stages:
            raise ConfigError("AttentionResNet requires attention stages; use ResNet otherwise")
        self.config = config
        settings = config.attention
        widths = config.widths()
        self.stem = nn.Sequential(
            nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.attn = nn.ModuleDict()
        in_c = widths[0]
        for i, (w, n) in enumerate(zip(widths, config.block_layers), start=1):
            plain = n
            if i in settings.stages:
                plain = n - settings.trunk_units
                if plain < 1:
                    raise ConfigError(
                        f"stage {i} has {n} residual units; cannot move "
                        f"{settings.trunk_units} into an attention trunk"
                    )
            blocks = []
            for b in range(plain):
                stride = 2 if (i > 1 and b == 0) else 1
                blocks.append(BasicBlock(in_c, w, stride=stride))
                in_c = w
            setattr(self, f"layer{i}", nn.Sequential(*blocks))
            if i in settings.stages:
                # deeper stages may not divide cleanly; shrink the mask schedule there
                spatial = stage_spatial(config.input_shape, i)
                stage_settings = AttentionSettings(
                    stages=settings.stages,
                    combine_rule=settings.combine_rule,
                    downsample_steps=max_clean_steps(spatial, settings.downsample_steps),
                    trunk_units=settings.trunk_units,
                    skip_connections=settings.skip_connections,
                )
                self.attn[str(i)] = AttentionModule(w, spatial, stage_settings)
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(widths[-1], 1)
        init_parameters(self, config.seed)

    def layer_map(self) -> dict[str, nn.Module]:
        layers: dict[str, nn.Module] = {"stem": self.stem}
        for i in range(1, 5):
            key = str(i)
            layers[f"layer{i}"] = self.attn[key] if key in self.attn else getattr(self, f"layer{i}")
        return layers

    def forward(self, x):
        x = self.stem(x)
        for i in range(1, 5):
            x = getattr(self, f"layer{i}")(x)
            key = str(i)
            if key in self.attn:
                x = self.attn[key](x)
        x = self.avgpool(x).flatten(1)
        return self.fc(x)


def build_attention_resnet(
    base_config: ModelConfig,
    insertion_stages: tuple[int, ...] | None = None,
) -> nn.Module:
    """Insert attention modules into a ResNet config without changing its unit count.

    ``insertion_stages`` overrides the config's attention placement; an empty
    tuple returns the plain baseline.
    """
    if base_config.family != "resnet":
        raise ConfigError("attention variants exist only for the resnet family")
    settings = base_config.attention or AttentionSettings()
    if insertion_stages is not None:
        settings = AttentionSettings(
            stages=tuple(insertion_stages),
            combine_rule=settings.combine_rule,
            downsample_steps=settings.downsample_steps,
            trunk_units=settings.trunk_units,
            skip_connections=settings.skip_connections,
        )
    config = ModelConfig(
        family=base_config.family,
        block_layers=base_config.block_layers,
        stage_widths=base_config.stage_widths,
        input_shape=base_config.input_shape,
        head=base_config.head,
        seed=base_config.seed,
        attention=settings if settings.stages else None,
    )
    if not settings.stages:
        return ResNet(config)
    return AttentionResNet(config)
