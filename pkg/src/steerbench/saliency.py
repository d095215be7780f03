"""Gradient saliency maps and the black->red->yellow overlay rendering.

The map is the absolute gradient of the scalar prediction with respect to a
named layer's activations, reduced over channels by max, upsampled to the
input resolution, and min-max normalized.  Rendering colorizes the map with
a piecewise-linear colormap (black at 0, red at 0.5, yellow at 1) and blends
it over the original frame, overlay-weighted by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, StructuralError

DEFAULT_BLEND_RATIO = 0.75


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # H,W in [0,1]; max 1 unless identically zero
    source_layer: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise StructuralError(f"saliency values must be H,W, got shape {v.shape}")
        if v.min() < 0 or v.max() > 1:
            raise StructuralError("saliency values must lie in [0, 1]")


def _resolve_layer(model, layer: str) -> torch.nn.Module:
    try:
        layers = model.layer_map()
    except AttributeError:
        raise ConfigError(f"model {type(model).__name__} does not expose named layers")
    if layer not in layers:
        raise ConfigError(f"unknown layer {layer!r}; available: {sorted(layers)}")
    return layers[layer]


def saliency_map(model, image: np.ndarray, layer: str) -> SaliencyMap:
    """Normalized |d(prediction)/d(activations)| for one image.

    ``image`` is H,W,3 in [0,1].  For a scalar regressor the backpropagated
    score is the prediction itself.
    """
    if image.ndim != 3 or image.shape[-1] != 3:
        raise StructuralError(f"image must be H,W,3, got {image.shape}")
    target = _resolve_layer(model, layer)
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float().unsqueeze(0)

    captured: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        captured.append(output)

    handle = target.register_forward_hook(hook)
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            score = model(x).reshape(())
            if not captured:
                raise StructuralError(f"layer {layer!r} was never reached in the forward pass")
            activation = captured[-1]
            (grad,) = torch.autograd.grad(score, activation)
    finally:
        handle.remove()
        model.train(was_training)

    raw = grad.abs().amax(dim=1, keepdim=True)  # channel reduction by max
    h, w = image.shape[:2]
    raw = F.interpolate(raw, size=(h, w), mode="bilinear", align_corners=False)
    raw = raw[0, 0].numpy().astype(np.float64)

    peak, floor = raw.max(), raw.min()
    if peak == 0.0:
        values = np.zeros_like(raw, dtype=np.float32)
    elif peak == floor:
        values = np.ones_like(raw, dtype=np.float32)
    else:
        values = ((raw - floor) / (peak - floor)).astype(np.float32)
    return SaliencyMap(values=values, source_layer=layer)


def colorize(map_values: np.ndarray) -> np.ndarray:
    """Map [0,1] values through black -> red -> yellow; returns uint8 H,W,3."""
    v = np.asarray(map_values, dtype=np.float64)
    if v.size and (v.min() < 0 or v.max() > 1):
        raise StructuralError("colorize input must lie in [0, 1]")
    r = np.clip(2.0 * v, 0.0, 1.0)
    g = np.clip(2.0 * v - 1.0, 0.0, 1.0)
    rgb = np.stack([r, g, np.zeros_like(v)], axis=-1)
    return (rgb * 255.0).round().astype(np.uint8)


def _to_uint8(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image
    return (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def blend(original: np.ndarray, colorized: np.ndarray, ratio: float) -> np.ndarray:
    """Convex combination ratio*colorized + (1-ratio)*original, as uint8.

    Inputs may be uint8 or floats in [0,1]; shapes must match exactly.
    """
    if original.shape != colorized.shape:
        raise StructuralError(f"shape mismatch: {original.shape} vs {colorized.shape}")
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"blend ratio must be in [0, 1], got {ratio}")
    a = _to_uint8(original).astype(np.float64)
    b = _to_uint8(colorized).astype(np.float64)
    out = ratio * b + (1.0 - ratio) * a
    return np.clip(out, 0.0, 255.0).round().astype(np.uint8)


def overlay(
    model,
    image: np.ndarray,
    layer: str,
    ratio: float = DEFAULT_BLEND_RATIO,
    weight_overlay: bool = True,
) -> np.ndarray:
    """Saliency overlay for one image; ratio weights the colorized map by default."""
    smap = saliency_map(model, image, layer)
    colored = colorize(smap.values)
    effective = ratio if weight_overlay else 1.0 - ratio
    return blend(_to_uint8(image), colored, effective)


def render_strip(panels: list[np.ndarray], path: str | Path, gap: int = 4) -> Path:
    """Write panels side by side (original | baseline | attention) as one PNG."""
    if not panels:
        raise StructuralError("render_strip needs at least one panel")
    panels = [_to_uint8(p) for p in panels]
    h = panels[0].shape[0]
    if any(p.shape[0] != h or p.ndim != 3 for p in panels):
        raise StructuralError("all panels must be H,W,3 with equal heights")
    width = sum(p.shape[1] for p in panels) + gap * (len(panels) - 1)
    canvas = np.zeros((h, width, 3), dtype=np.uint8)
    xpos = 0
    for p in panels:
        canvas[:, xpos : xpos + p.shape[1]] = p
        xpos += p.shape[1] + gap
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path)
    return path
