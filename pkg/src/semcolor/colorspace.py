"""CIE Lab <-> sRGB conversion and chroma helpers.

All functions work on numpy arrays with channels last. RGB images are
``uint8`` arrays of shape (H, W, 3); Lab images are float arrays of shape
(H, W, 3) holding L in [0, 100] and a, b in [-127, 128].
"""

from __future__ import annotations

import numpy as np

L_RANGE = (0.0, 100.0)
AB_RANGE = (-127.0, 128.0)

# sRGB primaries (IEC 61966-2-1); the D65 white is taken as the matrix row sums
# so that neutral RGB maps to a = b = 0 exactly.
RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
WHITE_D65 = RGB_TO_XYZ.sum(axis=1)

_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _EPS, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    t3 = t**3
    return np.where(t3 > _EPS, t3, (116.0 * t - 16.0) / _KAPPA)


def check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    if np.issubdtype(img.dtype, np.floating) and not np.all(np.isfinite(img)):
        raise ValueError("RGB image contains non-finite values")
    if img.min() < 0 or img.max() > 255:
        raise ValueError("RGB samples must lie in [0, 255]")
    return img


def check_lab(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) Lab image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("Lab image contains non-finite values")
    L, ab = img[..., 0], img[..., 1:]
    if L.min() < L_RANGE[0] or L.max() > L_RANGE[1]:
        raise ValueError(f"L channel outside {L_RANGE}")
    if ab.min() < AB_RANGE[0] or ab.max() > AB_RANGE[1]:
        raise ValueError(f"a/b channels outside {AB_RANGE}")
    return img


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an 8-bit sRGB image to CIE Lab (D65), clamped to the Lab ranges."""
    img = check_rgb(img)
    rgb = _srgb_to_linear(img.astype(np.float64) / 255.0)
    xyz = rgb @ RGB_TO_XYZ.T / WHITE_D65
    fx, fy, fz = (_f(xyz[..., i]) for i in range(3))
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    lab[..., 0] = np.clip(lab[..., 0], *L_RANGE)
    lab[..., 1:] = np.clip(lab[..., 1:], *AB_RANGE)
    return lab


def lab_to_rgb(img: np.ndarray) -> np.ndarray:
    """Convert a Lab image back to 8-bit sRGB; out-of-gamut colors are clipped."""
    lab = check_lab(img)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65
    rgb = _linear_to_srgb(xyz @ XYZ_TO_RGB.T)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def split_lab(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a Lab image into its lightness plane (H, W) and chroma map (H, W, 2)."""
    lab = check_lab(img)
    return lab[..., 0].copy(), lab[..., 1:].copy()


def merge_lab(gray: np.ndarray, ab: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray, dtype=np.float64)
    ab = np.asarray(ab, dtype=np.float64)
    if gray.shape != ab.shape[:2] or ab.shape[-1] != 2:
        raise ValueError(f"cannot merge L {gray.shape} with ab {ab.shape}")
    return np.concatenate([gray[..., None], ab], axis=-1)


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """Lightness channel of an RGB image."""
    return rgb_to_lab(img)[..., 0]


def gray_to_unit(gray: np.ndarray) -> np.ndarray:
    """Map L in [0, 100] to [-1, 1], the network input convention."""
    return np.asarray(gray, dtype=np.float64) / 50.0 - 1.0


def _linear_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, edge clamped (same convention as align_corners=False)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resampling of the two leading (spatial) axes of ``x``."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be at least 1x1")
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[:2]
    if (h, w) == (target_h, target_w):
        return x.copy()
    lo, hi, t = _linear_weights(h, target_h)
    t = t.reshape((-1,) + (1,) * (x.ndim - 1))
    x = x[lo] * (1.0 - t) + x[hi] * t
    lo, hi, t = _linear_weights(w, target_w)
    t = t.reshape((1, -1) + (1,) * (x.ndim - 2))
    return x[:, lo] * (1.0 - t) + x[:, hi] * t


def resize_chroma(ab: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resample a chroma map (H, W, 2) to a new resolution."""
    out = resize_bilinear(ab, target_h, target_w)
    return np.clip(out, *AB_RANGE)


def resize_nearest(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour resampling; never invents values (used for label maps)."""
    h, w = x.shape[:2]
    rows = np.minimum(((np.arange(target_h) + 0.5) * h / target_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(target_w) + 0.5) * w / target_w).astype(np.int64), w - 1)
    return x[rows][:, cols]


def bin_width(bins: int = 256) -> float:
    """Width of one quantization cell in chroma units."""
    return (AB_RANGE[1] - AB_RANGE[0]) / bins


def quantize_ab(ab: np.ndarray, bins: int = 256) -> np.ndarray:
    """Uniformly quantize chroma in [-127, 128] into integer bins ``0..bins-1``."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    ab = np.asarray(ab, dtype=np.float64)
    idx = np.floor((ab - AB_RANGE[0]) / bin_width(bins))
    return np.clip(idx, 0, bins - 1).astype(np.int64)


def dequantize_ab(q: np.ndarray, bins: int = 256) -> np.ndarray:
    """Chroma value at the center of each bin."""
    q = np.asarray(q)
    return AB_RANGE[0] + (q + 0.5) * bin_width(bins)


def bins_to_unit(q: np.ndarray, bins: int = 256) -> np.ndarray:
    """Bin index -> normalized value ``2 * idx / (bins - 1) - 1`` in [-1, 1]."""
    return 2.0 * np.asarray(q, dtype=np.float64) / (bins - 1) - 1.0


def unit_to_bins(v: np.ndarray, bins: int = 256) -> np.ndarray:
    idx = np.rint((np.asarray(v, dtype=np.float64) + 1.0) * (bins - 1) / 2.0)
    return np.clip(idx, 0, bins - 1).astype(np.int64)
