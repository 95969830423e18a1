"""Discretized mixture of logistics over the two chroma channels (a, b).

Parameter maps are laid out channels-first as ``(N, 6K, H, W)``::

    [ logits | mean_a | mean_b | log_scale_a | log_scale_b | coeff ]   (K each)

Chroma values live on the normalized grid ``v = 2 * idx / (bins - 1) - 1``.
Channel b's location is shifted by ``tanh(coeff) * a`` where ``a`` is the
realized (quantized) value of channel a.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

LOG_SCALE_MIN = -7.0
PARAMS_PER_COMPONENT = 6


def dmol_channels(num_mix: int) -> int:
    return PARAMS_PER_COMPONENT * num_mix


def split_params(params: torch.Tensor, log_scale_min: float = LOG_SCALE_MIN):
    """Split a parameter map into (logits, means, log_scales, coeffs).

    Shapes: logits/coeffs ``(N, K, H, W)``; means/log_scales ``(N, 2, K, H, W)``.
    """
    if params.dim() != 4 or params.shape[1] % PARAMS_PER_COMPONENT:
        raise ValueError(f"DMoL parameter map must be (N, 6K, H, W), got {tuple(params.shape)}")
    if not torch.isfinite(params).all():
        raise ValueError("DMoL parameters contain non-finite values")
    k = params.shape[1] // PARAMS_PER_COMPONENT
    logits, ma, mb, sa, sb, coeff = torch.split(params, k, dim=1)
    means = torch.stack([ma, mb], dim=1)
    log_scales = torch.clamp(torch.stack([sa, sb], dim=1), min=log_scale_min)
    return logits, means, log_scales, torch.tanh(coeff)


def _bin_log_prob(x, loc, log_scale, idx, bins):
    half = 1.0 / (bins - 1)
    inv_s = torch.exp(-log_scale)
    plus = inv_s * (x - loc + half)
    minus = inv_s * (x - loc - half)
    log_cdf_plus = F.logsigmoid(plus)
    log_sf_minus = F.logsigmoid(-minus)
    # log(sigmoid(p) - sigmoid(m)) = logsig(p) + logsig(-m) + log(1 - exp(-(p - m)))
    log_mid = log_cdf_plus + log_sf_minus + torch.log(-torch.expm1(-2.0 * half * inv_s))
    return torch.where(
        idx == 0, log_cdf_plus, torch.where(idx == bins - 1, log_sf_minus, log_mid)
    )


def dmol_log_prob(
    params: torch.Tensor,
    target: torch.Tensor,
    bins: int = 256,
    log_scale_min: float = LOG_SCALE_MIN,
) -> torch.Tensor:
    """Per-pixel log-likelihood (nats) of quantized chroma ``target``.

    Args:
        params: ``(N, 6K, H, W)`` parameter map.
        target: ``(N, 2, H, W)`` integer bin indices in ``[0, bins)``.

    Returns:
        ``(N, H, W)`` log-probabilities.
    """
    logits, means, log_scales, coeffs = split_params(params, log_scale_min)
    n, _, h, w = params.shape
    if target.shape != (n, 2, h, w):
        raise ValueError(f"target shape {tuple(target.shape)} does not match params {(n, 2, h, w)}")
    if target.dtype.is_floating_point:
        raise ValueError("target must hold integer bin indices")
    if target.min() < 0 or target.max() >= bins:
        raise ValueError(f"target bins outside [0, {bins})")
    idx = target.unsqueeze(2)  # (N, 2, 1, H, W)
    x = 2.0 * idx.to(params.dtype) / (bins - 1) - 1.0
    loc_a = means[:, 0]
    loc_b = means[:, 1] + coeffs * x[:, 0]
    lp_a = _bin_log_prob(x[:, 0], loc_a, log_scales[:, 0], idx[:, 0], bins)
    lp_b = _bin_log_prob(x[:, 1], loc_b, log_scales[:, 1], idx[:, 1], bins)
    return torch.logsumexp(F.log_softmax(logits, dim=1) + lp_a + lp_b, dim=1)


def dmol_nll(params: torch.Tensor, target: torch.Tensor, bins: int = 256) -> torch.Tensor:
    """Mean negative log-likelihood per pixel."""
    return -dmol_log_prob(params, target, bins).mean()


def _to_bin_centers(v: np.ndarray, bins: int) -> np.ndarray:
    idx = np.clip(np.rint((v + 1.0) * (bins - 1) / 2.0), 0, bins - 1)
    return 2.0 * idx / (bins - 1) - 1.0


def _logistic(rng: np.random.Generator, loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=loc.shape)
    return loc + scale * (np.log(u) - np.log1p(-u))


def dmol_sample(
    params: torch.Tensor,
    rng: np.random.Generator,
    temperature: float = 1.0,
    bins: int = 256,
) -> torch.Tensor:
    """Draw one chroma sample per pixel.

    The temperature divides the mixture logits and multiplies the logistic
    scales, so ``temperature -> 0`` collapses onto the most likely mean.
    Returns normalized values at bin centers, ``(N, 2, H, W)``.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    logits, means, log_scales, coeffs = split_params(params.detach())
    logits = logits.double().numpy()
    means = means.double().numpy()
    scales = np.exp(log_scales.double().numpy()) * temperature
    coeffs = coeffs.double().numpy()

    probs = torch.softmax(torch.from_numpy(logits) / temperature, dim=1).numpy()
    cdf = np.cumsum(probs, axis=1)
    u = rng.uniform(size=(logits.shape[0], 1) + logits.shape[2:])
    k = np.minimum((u > cdf).sum(axis=1, keepdims=True), logits.shape[1] - 1)

    def pick(arr):
        return np.take_along_axis(arr, k, axis=1)[:, 0]

    a = _logistic(rng, pick(means[:, 0]), pick(scales[:, 0]))
    a = _to_bin_centers(np.clip(a, -1.0, 1.0), bins)
    b = _logistic(rng, pick(means[:, 1]) + pick(coeffs) * a, pick(scales[:, 1]))
    b = _to_bin_centers(np.clip(b, -1.0, 1.0), bins)
    return torch.from_numpy(np.stack([a, b], axis=1)).to(params.dtype)


def _clamped_logistic_mean(loc: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    # E[clip(X, -1, 1)] for X ~ Logistic(loc, scale), closed form
    return 1.0 - scale * (F.softplus((1.0 - loc) / scale) - F.softplus((-1.0 - loc) / scale))


def dmol_mean(params: torch.Tensor) -> torch.Tensor:
    """Mixture expectation of (a, b) in normalized units, ``(N, 2, H, W)``."""
    logits, means, log_scales, coeffs = split_params(params)
    weights = torch.softmax(logits, dim=1)
    scales = torch.exp(log_scales)
    mean_a = _clamped_logistic_mean(means[:, 0], scales[:, 0])
    mean_b = _clamped_logistic_mean(means[:, 1] + coeffs * mean_a, scales[:, 1])
    out = torch.stack([(weights * mean_a).sum(1), (weights * mean_b).sum(1)], dim=1)
    return out.clamp(-1.0, 1.0)


def mixture_entropy(params: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Entropy of the tempered mixture weights per pixel, ``(N, H, W)``."""
    logits = split_params(params)[0] / temperature
    logp = F.log_softmax(logits, dim=1)
    return -(logp.exp() * logp).sum(1)
