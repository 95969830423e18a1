"""Shared trunk, color-embedding branch and segmentation branch.

Channel counts follow the 64-base reference network and are scaled by
``base_channels / 64``; the topology (strides, dilations, block counts)
never changes with scale.
"""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from semcolor.config import ModelConfig
from semcolor.dmol import dmol_channels


def conv3x3(cin: int, cout: int, stride: int = 1, dilation: int = 1) -> nn.Conv2d:
    conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)
    variance_scaling_(conv)
    return conv


def variance_scaling_(conv: nn.Conv2d, scale: float = 1.0) -> nn.Conv2d:
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    nn.init.normal_(conv.weight, std=math.sqrt(scale / fan_in))
    nn.init.zeros_(conv.bias)
    return conv


class GatedResidualBlock(nn.Module):
    """``y = x + tanh(v) * sigmoid(g)`` with ``[v, g] = conv(elu(conv(x)))``.

    Both convolutions are 3x3 at the block's dilation. The second one is
    zero-initialized so a fresh block is the identity map.
    """

    def __init__(self, channels: int, dilation: int = 1):
        super().__init__()
        self.dilation = dilation
        self.conv1 = conv3x3(channels, channels, dilation=dilation)
        self.conv2 = nn.Conv2d(channels, 2 * channels, 3, padding=dilation, dilation=dilation)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        value, gate = self.conv2(F.elu(self.conv1(x))).chunk(2, dim=1)
        return x + torch.tanh(value) * torch.sigmoid(gate)


def _blocks(channels: int, count: int, dilation: int = 1) -> list[nn.Module]:
    return [GatedResidualBlock(channels, dilation) for _ in range(count)]


class Trunk(nn.Sequential):
    """Bottom layers shared by the embedding and segmentation branches."""

    def __init__(self, cfg: ModelConfig):
        w = cfg.width
        super().__init__(
            conv3x3(1, w(64)),
            *_blocks(w(64), 2),
            conv3x3(w(64), w(128), stride=2),
            *_blocks(w(128), 2),
            conv3x3(w(128), w(256), stride=2),
            *_blocks(w(256), 2),
            conv3x3(w(256), w(512)),
            *_blocks(w(512), 3, dilation=2),
        )
        self.input_size = cfg.input_size

    def forward(self, gray):
        if gray.dim() != 4 or gray.shape[1:] != (1, self.input_size, self.input_size):
            raise ValueError(
                f"trunk expects (N, 1, {self.input_size}, {self.input_size}), got {tuple(gray.shape)}"
            )
        return super().forward(gray)


class EmbeddingBranch(nn.Sequential):
    def __init__(self, cfg: ModelConfig):
        w = cfg.width
        super().__init__(
            conv3x3(w(512), w(512)),
            *_blocks(w(512), 3, dilation=4),
            conv3x3(w(512), cfg.emb_channels),
        )


class ASPP(nn.Module):
    """Parallel dilated 3x3 convolutions fused by addition."""

    def __init__(self, cin: int, num_classes: int, rates=(6, 12, 18)):
        super().__init__()
        self.rates = tuple(rates)
        self.branches = nn.ModuleList(conv3x3(cin, num_classes, dilation=r) for r in self.rates)

    def forward(self, x):
        out = self.branches[0](x)
        for branch in self.branches[1:]:
            out = out + branch(x)
        return out


class SegmentationBranch(nn.Sequential):
    def __init__(self, cfg: ModelConfig):
        w = cfg.width
        super().__init__(
            conv3x3(w(512), w(512)),
            *_blocks(w(512), 3, dilation=2),
            ASPP(w(512), cfg.num_classes),
        )


class Backbone(nn.Module):
    """Trunk plus the two task branches and the auxiliary DMoL color head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg)
        self.embed = EmbeddingBranch(cfg)
        self.segment = SegmentationBranch(cfg)
        self.aux_head = nn.Conv2d(cfg.emb_channels, dmol_channels(cfg.mixture_components), 1)
        variance_scaling_(self.aux_head, scale=0.1)

    def forward(self, gray):
        shared = self.trunk(gray)
        emb = self.embed(shared)
        return emb, self.segment(shared), self.aux_head(emb)


def trunk_forward(gray, backbone: Backbone):
    return backbone.trunk(gray)


def layer_table(cfg: ModelConfig) -> list[dict]:
    """Shape table of every layer, computed on the meta device (no FLOPs).

    Each row has ``branch``, ``module``, ``resolution``, ``channels`` and
    ``dilation`` (``None`` for plain convolutions), in execution order.
    """
    with torch.device("meta"):
        net = Backbone(cfg)
    rows = []

    def record(branch, name):
        def hook(module, inputs, output):
            if isinstance(module, GatedResidualBlock):
                kind, dil = "residual", module.dilation
            elif isinstance(module, ASPP):
                kind, dil = "add", None
            else:
                kind = f"conv{module.kernel_size[0]}x{module.kernel_size[0]}/{module.stride[0]}"
                dil = module.dilation[0] if module.dilation[0] > 1 else None
            rows.append(dict(branch=branch, module=kind, resolution=output.shape[-1],
                             channels=output.shape[1], dilation=dil))
        return hook

    handles = []
    for branch, seq in (("shared", net.trunk), ("embedding", net.embed), ("segmentation", net.segment)):
        for i, mod in enumerate(seq):
            if isinstance(mod, ASPP):
                for branch_conv in mod.branches:
                    handles.append(branch_conv.register_forward_hook(record(branch, "aspp")))
            handles.append(mod.register_forward_hook(record(branch, str(i))))
    net(torch.zeros(1, 1, cfg.input_size, cfg.input_size, device="meta"))
    for h in handles:
        h.remove()
    return rows
