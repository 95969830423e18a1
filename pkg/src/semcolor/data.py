"""Image/mask ingestion, the synthetic shapes corpus and batching.

On-disk layout (shared by real datasets and the synthetic corpus)::

    DIR/images/<id>.png|jpg   RGB image
    DIR/masks/<id>.png        indexed label map, 255 = ignore
    DIR/list.txt              one id per line (optionally train.txt / val.txt)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from semcolor import colorspace
from semcolor.config import IGNORE_LABEL, ModelConfig

log = logging.getLogger(__name__)

# Background gray, then object colors with moderate chroma and well separated
# lightness (Lab: (55,0,0) (36,40,25) (74,-35,30) (46,10,-42) (86,-2,50) ...).
PALETTE = np.array(
    [
        (132, 132, 132),
        (148, 52, 47),
        (132, 198, 125),
        (73, 107, 179),
        (242, 213, 119),
        (52, 169, 190),
        (95, 44, 113),
        (222, 141, 80),
    ],
    dtype=np.int64,
)
# Darker gray background, then object colors sharing one lightness (Lab L = 68),
# so only shape context tells classes apart in the gray image. Pair with
# ``class_shapes=True``.
ISOLUMINANT_PALETTE = np.array(
    [(94, 94, 94), (254, 130, 105), (94, 185, 100), (115, 167, 247)],
    dtype=np.int64,
)
SHAPE_KINDS = ("circle", "rectangle", "triangle")


@dataclass
class Sample:
    rgb: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) int64, IGNORE_LABEL allowed
    id: str


@dataclass
class SyntheticSpec:
    num_images: int = 64
    size: int = 32
    num_classes: int = 4
    jitter: int = 8
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    seed: int = 0
    palette: np.ndarray | None = field(default=None, repr=False)
    class_shapes: bool = False  # object class c is always drawn as shape_kinds[(c - 1) % len]

    def colors(self) -> np.ndarray:
        if self.palette is not None:
            pal = np.asarray(self.palette, dtype=np.int64)
        elif self.num_classes <= len(PALETTE):
            pal = PALETTE[: self.num_classes]
        else:
            extra = np.random.default_rng(12345).integers(30, 226, size=(self.num_classes - len(PALETTE), 3))
            pal = np.concatenate([PALETTE, extra])
        if len(pal) != self.num_classes:
            raise ValueError("palette size must equal num_classes")
        return pal


def _shape_mask(kind: str, y0: int, x0: int, hs: int, ws: int, size: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "rectangle":
        return (yy >= y0) & (yy < y0 + hs) & (xx >= x0) & (xx < x0 + ws)
    if kind == "circle":
        r = min(hs, ws) / 2.0
        cy, cx = y0 + hs / 2.0 - 0.5, x0 + ws / 2.0 - 0.5
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    if kind == "triangle":
        apex = x0 + rng.uniform(0, ws - 1)
        pts = np.array([(y0, apex), (y0 + hs - 1, x0), (y0 + hs - 1, x0 + ws - 1)], dtype=float)

        def side(p, q):
            return (xx - q[1]) * (p[0] - q[0]) - (yy - q[0]) * (p[1] - q[1])

        d = [side(pts[i], pts[(i + 1) % 3]) for i in range(3)]
        return ((d[0] >= 0) & (d[1] >= 0) & (d[2] >= 0)) | ((d[0] <= 0) & (d[1] <= 0) & (d[2] <= 0))
    raise ValueError(f"unknown shape kind {kind!r}")


def make_synthetic_corpus(spec: SyntheticSpec) -> list[Sample]:
    """Gray background plus 1-3 non-overlapping shapes colored by class.

    Every painted pixel gets ``palette[class] + jitter`` where the jitter is
    one uniform integer offset per shape and channel, ``|jitter| <= spec.jitter``.
    """
    pal = spec.colors()
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    samples = []
    for n in range(spec.num_images):
        mask = np.zeros((size, size), dtype=np.int64)
        rgb = np.empty((size, size, 3), dtype=np.int64)
        rgb[:] = pal[0] + rng.integers(-spec.jitter, spec.jitter + 1, size=3)
        if spec.num_classes > 1:
            boxes = []
            for _ in range(int(rng.integers(1, 4))):
                for _attempt in range(20):
                    hs, ws = (int(v) for v in rng.integers(size // 4, size // 2 + 1, size=2))
                    y0 = int(rng.integers(0, size - hs + 1))
                    x0 = int(rng.integers(0, size - ws + 1))
                    if all(y0 + hs + 1 <= by or by + bh + 1 <= y0 or x0 + ws + 1 <= bx or bx + bw + 1 <= x0
                           for by, bx, bh, bw in boxes):
                        break
                else:
                    continue
                boxes.append((y0, x0, hs, ws))
                kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
                cls = int(rng.integers(1, spec.num_classes))
                if spec.class_shapes:
                    kind = spec.shape_kinds[(cls - 1) % len(spec.shape_kinds)]
                region = _shape_mask(kind, y0, x0, hs, ws, size, rng)
                mask[region] = cls
                rgb[region] = pal[cls] + rng.integers(-spec.jitter, spec.jitter + 1, size=3)
        samples.append(Sample(np.clip(rgb, 0, 255).astype(np.uint8), mask, f"{n:05d}"))
    return samples


def write_corpus(samples: list[Sample], out_dir: str | Path, splits: dict[str, list[str]] | None = None):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.rgb).save(out / "images" / f"{s.id}.png")
        m = Image.frombytes("P", s.mask.shape[::-1], s.mask.astype(np.uint8).tobytes())
        m.putpalette([v for c in range(256) for v in ((c * 37) % 256, (c * 91) % 256, (c * 53) % 256)])
        m.save(out / "masks" / f"{s.id}.png")
    (out / "list.txt").write_text("".join(f"{s.id}\n" for s in samples))
    for name, ids in (splits or {}).items():
        (out / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids))


def load_sample(image_path: str | Path, mask_path: str | Path, input_size: int,
                num_classes: int) -> Sample:
    """Read an image/mask pair and rescale both to ``input_size`` squared."""
    image_path, mask_path = Path(image_path), Path(mask_path)
    try:
        with Image.open(image_path) as im:
            if im.width == 0 or im.height == 0:
                raise ValueError("empty image")
            rgb = np.asarray(im.convert("RGB").resize((input_size, input_size), Image.BILINEAR))
        with Image.open(mask_path) as im:
            if im.mode not in ("P", "L"):
                raise ValueError(f"mask must be an indexed PNG, got mode {im.mode}")
            mask = np.asarray(im.resize((input_size, input_size), Image.NEAREST)).astype(np.int64)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot load {image_path} / {mask_path}: {exc}") from exc
    bad = (mask >= num_classes) & (mask != IGNORE_LABEL)
    if bad.any():
        raise ValueError(f"{mask_path}: label {int(mask[bad].max())} >= num_classes={num_classes}")
    return Sample(rgb.copy(), mask, image_path.stem)


def read_ids(root: str | Path, list_name: str = "list.txt") -> list[str]:
    return [line.strip() for line in (Path(root) / list_name).read_text().splitlines() if line.strip()]


def load_corpus(root: str | Path, input_size: int, num_classes: int,
                list_name: str = "list.txt") -> list[Sample]:
    root = Path(root)
    samples = []
    for sid in read_ids(root, list_name):
        candidates = [root / "images" / f"{sid}{ext}" for ext in (".png", ".jpg", ".jpeg")]
        image = next((p for p in candidates if p.exists()), candidates[0])
        samples.append(load_sample(image, root / "masks" / f"{sid}.png", input_size, num_classes))
    return samples


@dataclass
class Batch:
    """Network-ready arrays for a set of samples.

    gray: L plane (N, S, S); gray_unit: (N, 1, S, S) in [-1, 1];
    target: chroma bins at generator resolution (N, 2, s, s);
    mask: labels at generator resolution (N, s, s); rgb: (N, S, S, 3).
    """

    gray: np.ndarray
    gray_unit: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    rgb: np.ndarray
    ids: list[str]

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.gray[idx], self.gray_unit[idx], self.target[idx], self.mask[idx],
                     self.rgb[idx], [self.ids[i] for i in idx])


def prepare(samples: list[Sample], cfg: ModelConfig) -> Batch:
    if not samples:
        raise ValueError("no samples to prepare")
    s = cfg.gen_size
    grays, targets, masks, rgbs = [], [], [], []
    for smp in samples:
        if smp.rgb.shape[:2] != (cfg.input_size, cfg.input_size):
            raise ValueError(f"sample {smp.id} is {smp.rgb.shape[:2]}, expected {cfg.input_size}")
        lab = colorspace.rgb_to_lab(smp.rgb)
        gray, ab = colorspace.split_lab(lab)
        low = colorspace.resize_chroma(ab, s, s)
        grays.append(gray)
        targets.append(colorspace.quantize_ab(low, cfg.bins).transpose(2, 0, 1))
        masks.append(colorspace.resize_nearest(smp.mask, s, s))
        rgbs.append(smp.rgb)
    gray = np.stack(grays)
    return Batch(gray, colorspace.gray_to_unit(gray)[:, None], np.stack(targets),
                 np.stack(masks).astype(np.int64), np.stack(rgbs), [smp.id for smp in samples])


def batch_iter(data: Batch, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Shuffled minibatches; the order depends only on ``(seed, epoch)``.

    Every sample appears exactly once per epoch; the last batch may be short.
    """
    if batch_size > len(data):
        raise ValueError(f"batch_size {batch_size} exceeds corpus size {len(data)}")
    order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(len(data))
    for start in range(0, len(data), batch_size):
        yield data.subset(order[start:start + batch_size])
