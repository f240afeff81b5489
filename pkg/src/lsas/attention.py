"""Channel-attention operators and their trainable sub-attention wrapper.

Each operator exposes ``channel_logits`` (pre-sigmoid, one scalar per
channel) so the chain can attach before the squashing; evaluated standalone
it reproduces the classic x * sigmoid(logits) recalibration. CBAM keeps its
spatial branch as a separate post-multiplication stage.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigurationError(ValueError):
    """Invalid module hyperparameters detected at construction."""


def _zero_biases(module: nn.Module):
    # weights keep the default fan-in-scaled uniform init
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d, nn.Conv2d)) and m.bias is not None:
            nn.init.zeros_(m.bias)


class ChannelAttention(nn.Module):
    """Base class: recalibrates (B, C, H, W) with per-channel multipliers."""

    kind = "base"

    def __init__(self, channels: int):
        super().__init__()
        if channels < 1:
            raise ConfigurationError(f"channels must be positive, got {channels}")
        self.channels = channels

    def channel_logits(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid channel descriptor of shape (B, C)."""
        raise NotImplementedError

    def spatial_stage(self, y: torch.Tensor) -> torch.Tensor:
        """Hook applied after the channel multiplication (identity here)."""
        return y

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = torch.sigmoid(self.channel_logits(x))
        return self.spatial_stage(x * w[:, :, None, None])


class SqueezeExcite(ChannelAttention):
    """GAP -> bottleneck MLP; logits are the second projection's output."""

    kind = "se"

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__(channels)
        if channels % reduction != 0:
            raise ConfigurationError(
                f"channels ({channels}) must be divisible by reduction ({reduction})"
            )
        hidden = channels // reduction
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        _zero_biases(self)

    def channel_logits(self, x):
        u = x.mean(dim=(2, 3))
        return self.fc2(F.relu(self.fc1(u)))


class EfficientChannelAttention(ChannelAttention):
    """1-D convolution over the channel axis of the pooled descriptor."""

    kind = "eca"

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__(channels)
        if kernel_size % 2 != 1 or kernel_size < 1:
            raise ConfigurationError(f"kernel_size must be odd, got {kernel_size}")
        self.conv = nn.Conv1d(1, 1, kernel_size, padding=kernel_size // 2, bias=False)
        self.kernel_size = kernel_size

    def channel_logits(self, x):
        u = x.mean(dim=(2, 3))
        return self.conv(u.unsqueeze(1)).squeeze(1)


class StyleRecalibration(ChannelAttention):
    """Per-channel (mean, std) style pooling with channel-wise integration."""

    kind = "srm"

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__(channels)
        self.eps = eps
        # channel-wise fully connected: one (2 -> 1) weight pair per channel
        self.cfc = nn.Conv1d(channels, channels, kernel_size=2, groups=channels, bias=False)
        self.bn = nn.BatchNorm1d(channels)

    def channel_logits(self, x):
        b, c = x.shape[:2]
        flat = x.reshape(b, c, -1)
        mean = flat.mean(dim=-1)
        # population standard deviation, eps inside the square root
        std = torch.sqrt(flat.var(dim=-1, unbiased=False) + self.eps)
        z = self.cfc(torch.stack((mean, std), dim=-1))
        return self.bn(z).squeeze(-1)


class ConvBlockAttention(ChannelAttention):
    """Shared MLP over avg- and max-pooled descriptors, plus a spatial branch.

    Only the channel branch produces logits for wrapping; the spatial
    convolution runs unchanged after the channel multiplication.
    """

    kind = "cbam"

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7):
        super().__init__(channels)
        if channels % reduction != 0:
            raise ConfigurationError(
                f"channels ({channels}) must be divisible by reduction ({reduction})"
            )
        if spatial_kernel % 2 != 1:
            raise ConfigurationError(f"spatial_kernel must be odd, got {spatial_kernel}")
        hidden = channels // reduction
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.spatial_conv = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2)
        _zero_biases(self)

    def _mlp(self, u):
        return self.fc2(F.relu(self.fc1(u)))

    def channel_logits(self, x):
        avg = x.mean(dim=(2, 3))
        mx = x.amax(dim=(2, 3))
        return self._mlp(avg) + self._mlp(mx)

    def spatial_stage(self, y):
        desc = torch.cat(
            (y.mean(dim=1, keepdim=True), y.amax(dim=1, keepdim=True)), dim=1
        )
        return y * torch.sigmoid(self.spatial_conv(desc))


ATTENTION_KINDS = {
    "se": SqueezeExcite,
    "cbam": ConvBlockAttention,
    "srm": StyleRecalibration,
    "eca": EfficientChannelAttention,
}


def make_attention(kind: str, channels: int, **kwargs) -> ChannelAttention:
    """Construct one of the supported operators by name."""
    try:
        cls = ATTENTION_KINDS[kind.lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown attention kind {kind!r}; expected one of {sorted(ATTENTION_KINDS)}"
        ) from None
    return cls(channels, **kwargs)


class LSAS(nn.Module):
    """Multi-order sub-attention wrapper around a channel-attention operator.

    The wrapped forward multiplies the input by prod_i sigmoid(v_i) where
    v_0 is the base operator's pre-sigmoid logits and v_i = v_{i-1} * gamma_i
    + beta_i. Order 0 reproduces the base module exactly. Chains start at
    the identity affine (gamma = 1, beta = 0), so an untrained wrapper of
    order n yields sigmoid(v)^(n+1).
    """

    def __init__(self, base: ChannelAttention, order: int = 1):
        super().__init__()
        if order < 0:
            raise ConfigurationError(f"order must be non-negative, got {order}")
        self.base = base
        self.gammas = nn.ParameterList(
            nn.Parameter(torch.ones(base.channels)) for _ in range(order)
        )
        self.betas = nn.ParameterList(
            nn.Parameter(torch.zeros(base.channels)) for _ in range(order)
        )

    @property
    def order(self) -> int:
        return len(self.gammas)

    @property
    def channels(self) -> int:
        return self.base.channels

    def channel_multiplier(self, x: torch.Tensor) -> torch.Tensor:
        v = self.base.channel_logits(x)
        w = torch.sigmoid(v)
        for gamma, beta in zip(self.gammas, self.betas):
            v = v * gamma + beta
            w = w * torch.sigmoid(v)
        return w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = self.channel_multiplier(x)
        return self.base.spatial_stage(x * w[:, :, None, None])


def gated_attention(kind: str, channels: int, order: int, mu: int, **kwargs):
    """Structural selection gate: no module at all where channels <= mu.

    Skipping construction (instead of multiplying by ones at run time) is
    what buys the throughput gain; the literal run-time predicate lives in
    :func:`lsas.chain.selection_gate`.
    """
    if kind == "none" or channels <= mu:
        return None
    return LSAS(make_attention(kind, channels, **kwargs), order=order)
