# %% [markdown]
# # Sampling, quality and diversity
#
# Train a small model briefly, colorize held-out gray images, and score them
# with PSNR, MS-SSIM and mean IoU. The diversity protocol then draws two
# colorizations per input and measures how alike they are. Runtime: under
# a minute on one CPU core.

# %%
import numpy as np
import torch

from semcolor import colorspace, metrics
from semcolor.config import ModelConfig, TrainConfig
from semcolor.data import SyntheticSpec, make_synthetic_corpus, prepare
from semcolor.generator import sample_image
from semcolor.training import model_from_checkpoint, run_regime

torch.set_num_threads(1)
cfg = ModelConfig(input_size=32, base_channels=8, num_classes=4)
train = prepare(make_synthetic_corpus(SyntheticSpec(num_images=64, seed=11)), cfg)
held_out = prepare(make_synthetic_corpus(SyntheticSpec(num_images=8, seed=12)), cfg)
result = run_regime(cfg, TrainConfig(epochs=15, batch_size=8, seed=0), train)
model = model_from_checkpoint(result.trainer.state())  # Polyak-averaged weights

# %% [markdown]
# ## Colorize and score
# Sampling runs the generator once per chroma pixel (8 x 8 here), so each
# image needs 64 forward passes of the small generator.

# %%
rows = []
for i, (gray, rgb) in enumerate(zip(held_out.gray, held_out.rgb)):
    colorized = colorspace.lab_to_rgb(sample_image(model, gray, seed=i)[0])
    rows.append((metrics.psnr(colorized, rgb), metrics.ms_ssim(colorized, rgb)))
psnr, msssim = np.mean(rows, axis=0)
with torch.no_grad():
    _, _, seg = model.condition(torch.from_numpy(held_out.gray_unit).float())
miou = metrics.mean_iou(seg.argmax(1).numpy(), held_out.mask, cfg.num_classes)
print(f"held-out PSNR {psnr:.2f} dB, MS-SSIM {msssim:.3f}, mean IoU {miou:.3f}")

# %% [markdown]
# ## Diversity
# Pairwise MS-SSIM between two independent samples of the same input. Values
# near 1 mean the model always paints the same colors.

# %%
report = metrics.diversity_report(model, list(held_out.gray), seed=0)
print(metrics.summary_text(report))
print(metrics.histogram_csv(report))
