# %% [markdown]
# # Chroma as a discretized mixture of logistics
#
# The colorizer keeps the lightness plane of the input and predicts only the
# two chroma channels (a, b). Each channel is quantized to 256 bins, and the
# generator outputs a small mixture of logistics per pixel whose CDF mass over
# a bin is that bin's probability.

# %%
import numpy as np
import torch

from semcolor import colorspace
from semcolor.dmol import dmol_log_prob, dmol_mean, dmol_sample

# %% [markdown]
# ## Lab round trip
# A saturated orange survives the trip through Lab and back to sRGB.

# %%
rgb = np.array([[[255, 140, 0]]], dtype=np.uint8)
lab = colorspace.rgb_to_lab(rgb)
print("Lab:", lab.round(2).ravel())
print("back to RGB:", colorspace.lab_to_rgb(lab).ravel())

# %% [markdown]
# Quantizing the chroma snaps each value to a bin centre. With 256 bins the
# error never exceeds half a bin (about 0.5 Lab units).

# %%
ab = lab[..., 1:]
q = colorspace.quantize_ab(ab)
print("bins:", q.ravel(), " error:", np.abs(colorspace.dequantize_ab(q) - ab).max().round(3))

# %% [markdown]
# ## One mixture, every bin pair
# Build a random two-component mixture and sum its probability over all
# 32 x 32 bin pairs. The edge bins absorb the tails, so the total is 1.

# %%
bins, k = 32, 2
rng = np.random.default_rng(0)
raw = torch.from_numpy(rng.normal(size=6 * k) * 0.7)
raw[3 * k:5 * k] -= 2.0  # sharper components
ia, ib = np.meshgrid(np.arange(bins), np.arange(bins), indexing="ij")
target = torch.from_numpy(np.stack([ia, ib])[None])
params = raw[None, :, None, None].expand(1, 6 * k, bins, bins)
prob = dmol_log_prob(params, target, bins).exp()[0]
print(f"total mass: {prob.sum().item():.9f}")

# %% [markdown]
# With two components the distribution can be bimodal, so the mixture mean
# need not sit on the most likely bin pair.

# %%
single = raw[None, :, None, None]
mode = np.unravel_index(prob.argmax().item(), prob.shape)
mean_bins = colorspace.unit_to_bins(dmol_mean(single).ravel().numpy(), bins)
print("most likely bins:", tuple(int(v) for v in mode), " bins at the mean:", tuple(int(v) for v in mean_bins))

# %% [markdown]
# ## Temperature
# Sampling at temperature T divides the mixture logits by T and multiplies the
# logistic scales by T. Lower temperatures concentrate the draws.

# %%
wide = single.expand(1, 6 * k, 64, 64)
for t in (1.0, 0.5, 0.1):
    draws = dmol_sample(wide, np.random.default_rng(1), temperature=t).reshape(2, -1)
    print(f"T={t:<4} spread of a: {draws[0].std().item():.3f}  b: {draws[1].std().item():.3f}")
