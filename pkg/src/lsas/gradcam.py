"""Grad-CAM heatmaps and top-quantile focused regions.

The heatmap recipe: channel weights are the spatial mean of d(score)/d(activation)
at the chosen layer, the map is ReLU of the weighted activation sum, upsampled
bilinearly to the image resolution and min-max normalized. The focused region
keeps the pixels holding the top ``fraction`` of attention values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

DEFAULT_LAYER = "stage3"  # deepest spatial map of the CIFAR-style trunk


@dataclass(frozen=True)
class Heatmap:
    """Normalized (H, W) attribution map; max entry is 1 unless all zero."""

    values: np.ndarray
    source_layer: str
    target_class: int


@dataclass(frozen=True)
class RegionMask:
    """Boolean (H, W) mask of selected pixels."""

    bits: np.ndarray

    @property
    def fraction(self) -> float:
        return float(self.bits.sum()) / self.bits.size

    @property
    def pixel_count(self) -> int:
        return int(self.bits.sum())


def _resolve_layer(model, layer):
    if isinstance(layer, torch.nn.Module):
        for name, module in model.named_modules():
            if module is layer:
                return name, module
        raise ValueError("layer module is not part of the given model")
    modules = dict(model.named_modules())
    if layer not in modules:
        raise ValueError(f"model has no layer named {layer!r}")
    return layer, modules[layer]


def gradcam(model, image, target_class, layer=DEFAULT_LAYER) -> Heatmap:
    """Class-attribution heatmap at image resolution.

    ``image`` is a (C, H, W) tensor (a leading batch dim of 1 is accepted).
    Each call owns its gradient workspace; calls on the same model must not
    run concurrently.
    """
    name, module = _resolve_layer(model, layer)
    x = image if isinstance(image, torch.Tensor) else torch.as_tensor(image)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[0] != 1:
        raise ValueError(f"expected one (C, H, W) image, got shape {tuple(x.shape)}")

    captured = {}
    handle = module.register_forward_hook(lambda m, i, o: captured.update(a=o))
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            logits = model(x)
            if not 0 <= int(target_class) < logits.shape[1]:
                raise ValueError(
                    f"target_class {target_class} out of range for {logits.shape[1]} classes"
                )
            acts = captured["a"]
            if acts.dim() != 4:
                raise ValueError(f"layer {name!r} does not yield a spatial feature map")
            score = logits[0, int(target_class)]
            grads = torch.autograd.grad(score, acts)[0]
    finally:
        handle.remove()
        model.train(was_training)

    weights = grads.mean(dim=(2, 3))
    cam = F.relu((weights[:, :, None, None] * acts).sum(dim=1, keepdim=True))
    if cam.shape[-2:] != x.shape[-2:]:
        cam = F.interpolate(cam, size=x.shape[-2:], mode="bilinear", align_corners=False)
    cam = cam[0, 0].detach().cpu().numpy().astype(float)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return Heatmap(values=cam, source_layer=name, target_class=int(target_class))


def focused_region(heatmap, fraction: float = 0.2) -> RegionMask:
    """Pixels at or above the ceil(fraction * N)-th largest attention value.

    Ties at the threshold are included, so the mask can only exceed the
    nominal fraction; for distinct values it holds exactly ceil(fraction * N)
    pixels.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected an (H, W) map, got shape {values.shape}")
    flat = values.ravel()
    k = math.ceil(fraction * flat.size)
    threshold = np.partition(flat, flat.size - k)[flat.size - k]
    return RegionMask(bits=values >= threshold)


def heatmap_filename(split: str, index: int, class_id: int) -> str:
    return f"{split}_{index}_{class_id}.png"


def _heat_rgb(values: np.ndarray) -> np.ndarray:
    # compact blue -> cyan -> yellow -> red ramp
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(1.5 * v - 0.25, 0, 1)
    g = 1.0 - np.abs(2.0 * v - 1.0) * 0.8
    b = np.clip(1.0 - 1.5 * v, 0, 1)
    return (np.stack([r, g, b], axis=-1) * 255).round().astype(np.uint8)


def save_heatmap(heatmap: Heatmap, path, image=None, overlay_path=None, alpha=0.5):
    """Write the map as an 8-bit grayscale PNG, optionally with an overlay.

    ``image`` is an (H, W, 3) or (H, W) uint8/float array at the same
    resolution; the overlay blends a color ramp of the heatmap over it.
    """
    gray = (np.clip(heatmap.values, 0, 1) * 255).round().astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)
    if image is None or overlay_path is None:
        return
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    heat = _heat_rgb(heatmap.values)
    blended = ((1 - alpha) * img + alpha * heat).round().astype(np.uint8)
    Image.fromarray(blended, mode="RGB").save(overlay_path)
