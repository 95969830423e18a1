"""Conditional autoregressive chroma generator and the full colorization model."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from semcolor import colorspace
from semcolor.backbone import Backbone, variance_scaling_
from semcolor.config import ModelConfig
from semcolor.dmol import dmol_channels, dmol_sample


def causal_taps(kernel: int, include_center: bool) -> list[int]:
    """Flat kernel offsets visible to a raster-scan causal convolution."""
    c = kernel // 2
    taps = [r * kernel + col for r in range(c) for col in range(kernel)]
    taps += [c * kernel + col for col in range(c)]
    if include_center:
        taps.append(c * kernel + c)
    return taps


class MaskedConv2d(nn.Module):
    """Raster-scan masked convolution.

    Only the unmasked taps are gathered (via ``unfold``) and multiplied, so
    masked-out inputs never enter the arithmetic. Perturbing a masked input
    therefore leaves outputs bit-identical, not merely close.
    """

    def __init__(self, cin: int, cout: int, kernel: int = 3, include_center: bool = True):
        super().__init__()
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.register_buffer("taps", torch.tensor(causal_taps(kernel, include_center)), persistent=False)
        fan_in = cin * len(self.taps)
        self.weight = nn.Parameter(torch.randn(cout, cin, len(self.taps)) / math.sqrt(max(fan_in, 1)))
        self.bias = nn.Parameter(torch.zeros(cout))

    def forward(self, x):
        n, _, h, w = x.shape
        if len(self.taps) == 0:
            return self.bias.view(1, -1, 1, 1).expand(n, -1, h, w)
        cols = F.unfold(x, self.kernel, padding=self.kernel // 2)
        cols = cols.view(n, self.cin, self.kernel * self.kernel, h * w)[:, :, self.taps]
        out = torch.einsum("oct,nctl->nol", self.weight, cols)
        return (out + self.bias.view(1, -1, 1)).view(n, self.cout, h, w)


class GatedMaskedLayer(nn.Module):
    def __init__(self, cin: int, channels: int, cond_channels: int, kernel: int, first: bool):
        super().__init__()
        self.residual = not first and cin == channels
        self.conv = MaskedConv2d(cin, 2 * channels, kernel, include_center=not first)
        self.cond = variance_scaling_(nn.Conv2d(cond_channels, 2 * channels, 1))

    def forward(self, x, cond):
        value, gate = (self.conv(x) + self.cond(cond)).chunk(2, dim=1)
        out = torch.tanh(value) * torch.sigmoid(gate)
        return x + out if self.residual else out


class Generator(nn.Module):
    """Masked gated conv stack over normalized chroma, conditioned per layer.

    The output at raster index ``i`` depends on target pixels ``< i`` and on
    the condition map only.
    """

    def __init__(self, cfg: ModelConfig, cond_channels: int):
        super().__init__()
        self.size = cfg.gen_size
        c = cfg.generator_channels
        self.layers = nn.ModuleList(
            GatedMaskedLayer(2 if i == 0 else c, c, cond_channels, cfg.generator_kernel, first=i == 0)
            for i in range(cfg.generator_layers)
        )
        self.out = variance_scaling_(nn.Conv2d(c, dmol_channels(cfg.mixture_components), 1), 0.1)

    def forward(self, target_unit, cond):
        if target_unit.shape[-2:] != (self.size, self.size) or cond.shape[-2:] != (self.size, self.size):
            raise ValueError(
                f"generator works at {self.size}x{self.size}; got target {tuple(target_unit.shape)} "
                f"and condition {tuple(cond.shape)}"
            )
        x = target_unit
        for layer in self.layers:
            x = layer(x, cond)
        return self.out(x)


class ConditionFusion(nn.Module):
    """Combine the color embedding with segmentation predictions."""

    def __init__(self, mode: str, emb_channels: int, num_classes: int):
        super().__init__()
        self.mode = mode
        if mode == "feature_transform":
            self.gamma = nn.Conv2d(num_classes, emb_channels, 3, padding=1)
            self.beta = nn.Conv2d(num_classes, emb_channels, 3, padding=1)
            for conv in (self.gamma, self.beta):
                nn.init.zeros_(conv.weight)
                nn.init.zeros_(conv.bias)
        self.out_channels = emb_channels + (num_classes if mode == "concat" else 0)

    def forward(self, emb, seg_logits=None):
        if self.mode == "embedding_only":
            return emb
        if seg_logits is None:
            raise ValueError(f"fusion mode {self.mode!r} needs segmentation logits")
        if seg_logits.shape[-2:] != emb.shape[-2:]:
            raise ValueError("embedding and segmentation maps are not spatially aligned")
        probs = torch.softmax(seg_logits, dim=1)
        if self.mode == "concat":
            return torch.cat([emb, probs], dim=1)
        return emb * (1.0 + self.gamma(probs)) + self.beta(probs)


def fuse_condition(emb, seg_logits, fusion: ConditionFusion):
    return fusion(emb, seg_logits)


class Colorizer(nn.Module):
    """Backbone + condition fusion + autoregressive generator."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        cond_channels = cfg.emb_channels + (cfg.num_classes if cfg.fusion_mode == "concat" else 0)
        self.generator = Generator(cfg, cond_channels)
        # created last so that fusion modes share the generator's initial weights
        self.fusion = ConditionFusion(cfg.fusion_mode, cfg.emb_channels, cfg.num_classes)

    def condition(self, gray_unit):
        """Returns (condition map, aux DMoL params, segmentation logits)."""
        emb, seg, aux = self.backbone(gray_unit)
        return self.fusion(emb, seg), aux, seg

    def forward(self, gray_unit, target_bins):
        cond, aux, seg = self.condition(gray_unit)
        target_unit = 2.0 * target_bins.to(cond.dtype) / (self.cfg.bins - 1) - 1.0
        return dict(aux=aux, seg=seg, gen=self.generator(target_unit, cond))


@torch.no_grad()
def sample_chroma(model: Colorizer, gray_unit: torch.Tensor, rng: np.random.Generator,
                  temperature: float = 1.0) -> torch.Tensor:
    """Raster-scan sampling of one chroma map at generator resolution.

    ``gray_unit`` is ``(1, 1, S, S)``; returns normalized chroma ``(1, 2, s, s)``.
    """
    cond, _, _ = model.condition(gray_unit)
    s = model.cfg.gen_size
    canvas = torch.zeros(1, 2, s, s, dtype=cond.dtype)
    for i in range(s * s):
        r, c = divmod(i, s)
        params = model.generator(canvas, cond)
        canvas[:, :, r, c] = dmol_sample(params[:, :, r:r + 1, c:c + 1], rng, temperature,
                                         model.cfg.bins)[:, :, 0, 0]
    return canvas


def sample_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def chroma_to_lab(gray: np.ndarray, chroma_unit: np.ndarray, bins: int) -> np.ndarray:
    """Combine a full-resolution L plane with low-resolution normalized chroma."""
    ab = colorspace.dequantize_ab(colorspace.unit_to_bins(chroma_unit, bins), bins)
    ab = colorspace.resize_chroma(ab, *gray.shape)
    return colorspace.merge_lab(gray, ab)


def sample_image(model: Colorizer, gray: np.ndarray, seed: int = 0, temperature: float = 1.0,
                 count: int = 1) -> list[np.ndarray]:
    """Sample ``count`` Lab colorizations of an L plane (``input_size`` square).

    Sample ``j`` draws from its own stream seeded by ``(seed, j)``, so results
    do not depend on ``count``.
    """
    size = model.cfg.input_size
    if gray.shape != (size, size):
        raise ValueError(f"gray image must be {size}x{size}, got {gray.shape}")
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(colorspace.gray_to_unit(gray)).to(dtype)[None, None]
    model.eval()
    out = []
    for j in range(count):
        chroma = sample_chroma(model, x, sample_seed(seed, j), temperature)
        out.append(chroma_to_lab(gray, chroma[0].permute(1, 2, 0).double().numpy(), model.cfg.bins))
    return out
