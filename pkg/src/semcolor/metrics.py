"""PSNR, multi-scale SSIM, mean-IoU and the sample-diversity report."""

from __future__ import annotations

import csv
import io

import numpy as np

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
# per-scale exponents of the original 5-scale MS-SSIM
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIZE = 32


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio of 8-bit images in dB, capped at 100."""
    img, ref = np.asarray(img, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    mse = np.mean((img - ref) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0**2 / mse)))


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable "valid" correlation with a symmetric 1-D kernel
    n = len(g)
    rows = sum(g[i] * x[i:x.shape[0] - n + 1 + i] for i in range(n))
    return sum(g[i] * rows[:, i:rows.shape[1] - n + 1 + i] for i in range(n))


def _ssim_terms(x: np.ndarray, y: np.ndarray, data_range: float) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term for one channel at one scale."""
    g = gaussian_window(min(SSIM_WINDOW, *x.shape))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ms_ssim_scales(height: int, width: int) -> int:
    """5 scales when the coarsest one still fits an 11-px window, else 3."""
    return 5 if min(height, width) >= SSIM_WINDOW * 16 else 3


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0, scales: int | None = None) -> float:
    """Multi-scale SSIM of two images (H, W) or (H, W, C), averaged over channels.

    Uses K1=0.01, K2=0.03 and an 11-tap Gaussian window (sigma 1.5), shrunk to
    the image side at coarse scales. With fewer than 5 scales the leading
    exponents are renormalized to sum to one. Negative terms are clipped at 0.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if min(h, w) < MS_SSIM_MIN_SIZE:
        raise ValueError(f"MS-SSIM needs images of at least {MS_SSIM_MIN_SIZE}x{MS_SSIM_MIN_SIZE}, got {h}x{w}")
    m = scales or ms_ssim_scales(h, w)
    weights = np.array(MS_SSIM_WEIGHTS[:m])
    weights = weights / weights.sum()
    per_channel = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        value = 1.0
        for j in range(m):
            ssim_val, cs_val = _ssim_terms(x, y, data_range)
            term = ssim_val if j == m - 1 else cs_val
            value *= max(term, 0.0) ** weights[j]
            if j < m - 1:
                x, y = _downsample(x), _downsample(y)
        per_channel.append(value)
    return float(min(1.0, np.mean(per_channel)))


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_label: int = 255):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    valid = gt != ignore_label
    p, g = pred[valid].astype(np.int64), gt[valid].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= num_classes):
        raise ValueError(f"predicted labels outside [0, {num_classes})")
    if g.size and (g.min() < 0 or g.max() >= num_classes):
        raise ValueError(f"ground-truth labels outside [0, {num_classes})")
    return np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> float:
    """Mean IoU over classes that occur in the ground truth (rows of ``cm``)."""
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - inter
    present = cm.sum(1) > 0
    if not present.any():
        raise ValueError("no ground-truth pixels to evaluate")
    return float(np.mean(inter[present] / union[present]))


def mean_iou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_label: int = 255) -> float:
    """Mean intersection-over-union from the aggregated confusion matrix.

    Pixels labelled ``ignore_label`` in ``gt`` are skipped; classes absent
    from ``gt`` are left out of the mean. Stacked label maps (N, H, W) are
    aggregated into a single confusion matrix.
    """
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_label))


HISTOGRAM_EDGES = np.linspace(0.0, 1.0, 21)


def diversity_report(model, grays, pairs_per_input: int = 1, seed: int = 0, temperature: float = 1.0) -> dict:
    """Pairwise MS-SSIM between independent colorizations of the same inputs."""
    from semcolor.colorspace import lab_to_rgb
    from semcolor.generator import sample_image

    scores = []
    for i, gray in enumerate(grays):
        labs = sample_image(model, gray, seed=seed * 1_000_003 + i, temperature=temperature,
                            count=2 * pairs_per_input)
        rgbs = [lab_to_rgb(lab) for lab in labs]
        scores += [ms_ssim(rgbs[2 * k], rgbs[2 * k + 1]) for k in range(pairs_per_input)]
    scores = np.array(scores)
    counts, _ = np.histogram(scores, bins=HISTOGRAM_EDGES)
    h, w = np.asarray(grays[0]).shape
    return dict(
        scores=scores,
        histogram=[(float(lo), float(hi), int(c))
                   for lo, hi, c in zip(HISTOGRAM_EDGES[:-1], HISTOGRAM_EDGES[1:], counts)],
        summary=dict(pairs=len(scores), mean=float(scores.mean()), median=float(np.median(scores)),
                     min=float(scores.min()), max=float(scores.max()),
                     frac_0p80_0p95=float(np.mean((scores >= 0.8) & (scores <= 0.95))),
                     frac_below_0p999=float(np.mean(scores < 0.999)),
                     scales=ms_ssim_scales(h, w), window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2),
    )


def histogram_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ssim_lo", "ssim_hi", "count"])
    for lo, hi, c in report["histogram"]:
        writer.writerow([f"{lo:.2f}", f"{hi:.2f}", c])
    return buf.getvalue()


def summary_text(report: dict) -> str:
    s = report["summary"]
    header = (f"# MS-SSIM: {s['scales']} scales, gaussian window {s['window']} (sigma {SSIM_SIGMA}), "
              f"K1={s['k1']}, K2={s['k2']}\n")
    return header + "".join(f"{k}: {v}\n" for k, v in s.items() if k not in ("scales", "window", "k1", "k2"))
