"""ResNet backbones with a uniform attention-insertion point per block.

Depths 83/164/245 are pre-activation bottleneck nets for 32x32 / 96x96
inputs (depth = 9n + 2, n blocks per stage, stage output channels
64/128/256); depths 34/50 are the standard 7x7-stem nets for 224x224.
Attention sits on the residual branch output, before the additive shortcut,
and is structurally omitted in blocks whose output channels do not exceed
the gate threshold.

Parameter names follow ``stage{s}.block{b}.{submodule}.{tensor}`` so counts
and checkpoint surgery stay scriptable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import ConfigurationError, gated_attention

CIFAR_BLOCKS_PER_STAGE = {83: 9, 164: 18, 245: 27}
IMAGENET_LAYOUT = {34: ("basic", (3, 4, 6, 3)), 50: ("bottleneck", (3, 4, 6, 3))}
SUPPORTED_DEPTHS = sorted(CIFAR_BLOCKS_PER_STAGE) + sorted(IMAGENET_LAYOUT)


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 164
    num_classes: int = 10
    attention: str = "none"  # none | se | cbam | srm | eca
    lsas_order: int = 1
    gate_mu: int = 128
    input_size: tuple = (32, 32)

    def __post_init__(self):
        if self.depth not in SUPPORTED_DEPTHS:
            raise ConfigurationError(
                f"unsupported depth {self.depth}; expected one of {SUPPORTED_DEPTHS}"
            )
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.attention != "none":
            if self.lsas_order < 0:
                raise ConfigurationError(f"lsas_order must be >= 0, got {self.lsas_order}")
            if self.gate_mu < 0:
                raise ConfigurationError(f"gate_mu must be >= 0, got {self.gate_mu}")
        object.__setattr__(self, "input_size", tuple(self.input_size))


def conv3x3(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)


def conv1x1(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)


class Stage(nn.Module):
    """Container whose children are named block1..blockN."""

    def __init__(self, blocks):
        super().__init__()
        for i, block in enumerate(blocks, start=1):
            self.add_module(f"block{i}", block)

    def forward(self, x):
        for block in self.children():
            x = block(x)
        return x


class PreActBottleneck(nn.Module):
    """BN-ReLU-1x1 / BN-ReLU-3x3 / BN-ReLU-1x1 bottleneck, expansion 4."""

    expansion = 4

    def __init__(self, in_ch, width, stride=1, attention=None):
        super().__init__()
        out_ch = width * self.expansion
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = conv1x1(in_ch, width)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv2 = conv3x3(width, width, stride)
        self.bn3 = nn.BatchNorm2d(width)
        self.conv3 = conv1x1(width, out_ch)
        self.shortcut = (
            conv1x1(in_ch, out_ch, stride)
            if stride != 1 or in_ch != out_ch
            else None
        )
        self.attention = attention
        self.out_channels = out_ch

    def forward(self, x):
        h = F.relu(self.bn1(x))
        # projection shortcuts take the pre-activated input
        identity = self.shortcut(h) if self.shortcut is not None else x
        out = self.conv1(h)
        out = self.conv2(F.relu(self.bn2(out)))
        out = self.conv3(F.relu(self.bn3(out)))
        if self.attention is not None:
            out = self.attention(out)
        return out + identity


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch, width, stride=1, attention=None):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = conv3x3(in_ch, width, stride)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = conv3x3(width, out_ch)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = (
            nn.Sequential(conv1x1(in_ch, out_ch, stride), nn.BatchNorm2d(out_ch))
            if stride != 1 or in_ch != out_ch
            else None
        )
        self.attention = attention
        self.out_channels = out_ch

    def forward(self, x):
        identity = self.shortcut(x) if self.shortcut is not None else x
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.attention is not None:
            out = self.attention(out)
        return F.relu(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch, width, stride=1, attention=None):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = conv1x1(in_ch, width)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = conv3x3(width, width, stride)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = conv1x1(width, out_ch)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.shortcut = (
            nn.Sequential(conv1x1(in_ch, out_ch, stride), nn.BatchNorm2d(out_ch))
            if stride != 1 or in_ch != out_ch
            else None
        )
        self.attention = attention
        self.out_channels = out_ch

    def forward(self, x):
        identity = self.shortcut(x) if self.shortcut is not None else x
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.attention is not None:
            out = self.attention(out)
        return F.relu(out + identity)


def _make_stage(block_cls, n_blocks, in_ch, width, stride, cfg):
    blocks = []
    for i in range(n_blocks):
        out_ch = width * block_cls.expansion
        attn = gated_attention(cfg.attention, out_ch, cfg.lsas_order, cfg.gate_mu)
        blocks.append(block_cls(in_ch, width, stride if i == 0 else 1, attn))
        in_ch = out_ch
    return Stage(blocks), in_ch


class CifarPreActResNet(nn.Module):
    """3x3 stem to 16 channels, three stages, BN-ReLU-GAP-linear head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = CIFAR_BLOCKS_PER_STAGE[cfg.depth]
        self.config = cfg
        self.stem = conv3x3(3, 16)
        self.stage1, ch = _make_stage(PreActBottleneck, n, 16, 16, 1, cfg)
        self.stage2, ch = _make_stage(PreActBottleneck, n, ch, 32, 2, cfg)
        self.stage3, ch = _make_stage(PreActBottleneck, n, ch, 64, 2, cfg)
        self.head_bn = nn.BatchNorm2d(ch)
        self.fc = nn.Linear(ch, cfg.num_classes)

    def forward(self, x):
        x = self.stem(x)
        x = self.stage1(x)
        x = self.stage2(x)
        x = self.stage3(x)
        x = F.relu(self.head_bn(x))
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)


class ImageNetResNet(nn.Module):
    """7x7 stem, four stages of basic or bottleneck blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        style, counts = IMAGENET_LAYOUT[cfg.depth]
        block_cls = BasicBlock if style == "basic" else Bottleneck
        self.config = cfg
        self.stem = nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False)
        self.stem_bn = nn.BatchNorm2d(64)
        ch = 64
        for s, (n_blocks, width) in enumerate(zip(counts, (64, 128, 256, 512)), start=1):
            stage, ch = _make_stage(block_cls, n_blocks, ch, width, 1 if s == 1 else 2, cfg)
            self.add_module(f"stage{s}", stage)
        self.fc = nn.Linear(ch, cfg.num_classes)

    def forward(self, x):
        x = F.relu(self.stem_bn(self.stem(x)))
        x = F.max_pool2d(x, 3, stride=2, padding=1)
        for s in range(1, 5):
            x = getattr(self, f"stage{s}")(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)


def build_model(cfg: ModelConfig) -> nn.Module:
    if cfg.depth in CIFAR_BLOCKS_PER_STAGE:
        return CifarPreActResNet(cfg)
    return ImageNetResNet(cfg)


def count_parameters(model: nn.Module) -> int:
    """Exact number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_breakdown(model: nn.Module) -> dict:
    """Trainable parameter count per top-level child, in definition order."""
    counts = {}
    for name, child in model.named_children():
        counts[name] = count_parameters(child)
    direct = sum(p.numel() for p in model.parameters(recurse=False) if p.requires_grad)
    if direct:
        counts["(direct)"] = direct
    return counts


def format_millions(count: int) -> str:
    return f"{count / 1e6:.2f}"


def save_checkpoint(path, model, optimizer=None, epoch=None, metrics=None):
    """Single archive: config as JSON text plus named parameter tensors."""
    payload = {
        "config": json.dumps(asdict(model.config)),
        "model": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if epoch is not None:
        payload["epoch"] = epoch
    if metrics is not None:
        payload["metrics"] = metrics
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu"):
    """Rebuild the model from the stored config and load its weights.

    Returns (model, payload); the payload keeps optimizer state and metrics
    for resumable training.
    """
    payload = torch.load(path, map_location=map_location, weights_only=False)
    raw = json.loads(payload["config"])
    cfg = ModelConfig(**raw)
    model = build_model(cfg)
    model.load_state_dict(payload["model"], strict=True)
    return model, payload
