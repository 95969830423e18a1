"""Joint optimization of the embedding, segmentation and generation losses."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from semcolor.config import IGNORE_LABEL, ModelConfig, TrainConfig
from semcolor.data import Batch, batch_iter
from semcolor.dmol import dmol_nll
from semcolor.generator import Colorizer

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CURVE_FIELDS = ("epoch", "split", "L_emb", "L_seg", "L_gen", "L_sum")


@dataclass
class LossRecord:
    emb: float
    seg: float
    gen: float
    sum: float

    def row(self, epoch: int, split: str) -> dict:
        return dict(epoch=epoch, split=split, L_emb=self.emb, L_seg=self.seg, L_gen=self.gen, L_sum=self.sum)


def seg_cross_entropy(logits: torch.Tensor, mask: torch.Tensor, ignore_label: int = IGNORE_LABEL):
    """Mean softmax cross-entropy over non-ignored pixels; 0 when all are ignored."""
    valid = mask != ignore_label
    if not valid.any():
        return logits.sum() * 0.0
    return F.cross_entropy(logits, mask, ignore_index=ignore_label)


def weighted_sum(l_emb, l_seg, l_gen, weights=(1.0, 100.0, 1.0)):
    w1, w2, w3 = weights
    return w1 * l_emb + w2 * l_seg + w3 * l_gen


def batch_tensors(batch: Batch, dtype=torch.float32):
    if len(batch) == 0:
        raise ValueError("empty batch")
    return (torch.from_numpy(batch.gray_unit).to(dtype), torch.from_numpy(batch.target),
            torch.from_numpy(batch.mask))


def compute_losses(model: Colorizer, batch: Batch, weights=(1.0, 100.0, 1.0)):
    """Returns the tensors ``(L_emb, L_seg, L_gen, L_sum)``; ``L_sum`` is float64."""
    dtype = next(model.parameters()).dtype
    gray, target, mask = batch_tensors(batch, dtype)
    out = model(gray, target)
    l_emb = dmol_nll(out["aux"], target, model.cfg.bins)
    l_seg = seg_cross_entropy(out["seg"], mask)
    l_gen = dmol_nll(out["gen"], target, model.cfg.bins)
    l_sum = weighted_sum(l_emb.double(), l_seg.double(), l_gen.double(), weights)
    return l_emb, l_seg, l_gen, l_sum


@torch.no_grad()
def polyak_update(shadow: dict, params: dict, decay: float) -> dict:
    """In place ``shadow <- decay * shadow + (1 - decay) * params``."""
    for name, p in params.items():
        s = shadow[name]
        if s.shape != p.shape:
            raise ValueError(f"shadow/param shape mismatch for {name}")
        s.mul_(decay).add_(p.detach(), alpha=1.0 - decay)
    return shadow


def regime_model_config(model_cfg: ModelConfig, regime: str) -> ModelConfig:
    # the colorization-only network has no segmentation input to its generator
    if regime == "color_only" and model_cfg.fusion_mode != "embedding_only":
        return dataclasses.replace(model_cfg, fusion_mode="embedding_only")
    return model_cfg


def regime_weights(train_cfg: TrainConfig) -> tuple[float, float, float]:
    w1, w2, w3 = train_cfg.weights
    if train_cfg.regime == "color_only":
        return (w1, 0.0, w3)
    if train_cfg.regime.startswith("seg_only"):
        return (0.0, w2, 0.0)
    return (w1, w2, w3)


def trainable_names(model: Colorizer, regime: str) -> list[str]:
    names = [n for n, _ in model.named_parameters()]
    if regime == "color_only":
        return [n for n in names if not n.startswith("backbone.segment.")]
    if regime.startswith("seg_only"):
        return [n for n in names if n.startswith(("backbone.trunk.", "backbone.segment."))]
    return names


class Trainer:
    """Adam + Polyak averaging over the parameters active in a regime."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, dtype=torch.float32):
        self.train_cfg = train_cfg
        self.model_cfg = regime_model_config(model_cfg, train_cfg.regime)
        torch.manual_seed(train_cfg.seed)
        self.model = Colorizer(self.model_cfg).to(dtype)
        self.weights = regime_weights(train_cfg)
        self.active = trainable_names(self.model, train_cfg.regime)
        params = dict(self.model.named_parameters())
        for name, p in params.items():
            p.requires_grad_(name in self.active)
        self.optimizer = torch.optim.Adam(
            [params[n] for n in self.active], lr=train_cfg.lr,
            betas=(train_cfg.adam_beta1, train_cfg.adam_beta2), foreach=False,
        )
        self.shadow = {n: p.detach().clone() for n, p in params.items()}
        self.step = 0
        self.epoch = 0

    def named_params(self) -> dict:
        return dict(self.model.named_parameters())

    def init_trunk_from(self, ckpt: dict):
        """Copy shared-trunk weights (and their shadows) from a checkpoint."""
        params = self.named_params()
        copied = 0
        for name, value in ckpt["params"].items():
            if name.startswith("backbone.trunk."):
                with torch.no_grad():
                    params[name].copy_(value)
                    self.shadow[name].copy_(ckpt["shadow"].get(name, value))
                copied += 1
        if copied == 0:
            raise ValueError("checkpoint holds no shared-trunk parameters")

    def train_step(self, batch: Batch) -> LossRecord:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        try:
            l_emb, l_seg, l_gen, l_sum = compute_losses(self.model, batch, self.weights)
        except ValueError as exc:
            if "non-finite" not in str(exc):
                raise
            raise FloatingPointError(f"non-finite values at step {self.step}: {exc}") from exc
        record = LossRecord(l_emb.item(), l_seg.item(), l_gen.item(), l_sum.item())
        if not np.isfinite(record.sum):
            raise FloatingPointError(f"non-finite loss at step {self.step}: {record}")
        l_sum.backward()
        self.optimizer.step()
        self.step += 1
        decay = self.train_cfg.polyak_decay
        if self.train_cfg.polyak_warmup:
            decay = min(decay, (1.0 + self.step) / (10.0 + self.step))
        polyak_update(self.shadow, self.named_params(), decay)
        return record

    @contextlib.contextmanager
    def shadow_params(self):
        """Temporarily swap the Polyak-averaged parameters into the model."""
        params = self.named_params()
        saved = {n: p.detach().clone() for n, p in params.items()}
        with torch.no_grad():
            for n, p in params.items():
                p.copy_(self.shadow[n])
        try:
            yield self.model
        finally:
            with torch.no_grad():
                for n, p in params.items():
                    p.copy_(saved[n])

    @torch.no_grad()
    def evaluate(self, data: Batch, batch_size: int = 32, use_shadow: bool = True) -> LossRecord:
        """Pixel-weighted mean losses over ``data``; ``sum`` uses the regime weights."""
        ctx = self.shadow_params() if use_shadow else contextlib.nullcontext(self.model)
        totals = np.zeros(3)
        with ctx as model:
            model.eval()
            for start in range(0, len(data), batch_size):
                part = data.subset(np.arange(start, min(start + batch_size, len(data))))
                e, s, g, _ = compute_losses(model, part, self.weights)
                n_valid = max(int((part.mask != IGNORE_LABEL).sum()), 1)
                totals += np.array([float(e) * len(part), float(s) * n_valid, float(g) * len(part)])
        n_valid = max(int((data.mask != IGNORE_LABEL).sum()), 1)
        e, s, g = float(totals[0] / len(data)), float(totals[1] / n_valid), float(totals[2] / len(data))
        return LossRecord(e, s, g, float(weighted_sum(e, s, g, self.weights)))

    def state(self) -> dict:
        adam = {}
        params = self.named_params()
        for name in self.active:
            st = self.optimizer.state.get(params[name])
            if st:
                adam[name] = {k: v.detach().clone() for k, v in st.items()}
        return dict(
            params={n: p.detach().clone() for n, p in params.items()},
            shadow={n: s.clone() for n, s in self.shadow.items()},
            adam=adam,
            meta=dict(version=CHECKPOINT_VERSION, step=self.step, epoch=self.epoch,
                      model=dataclasses.asdict(self.model_cfg),
                      train=dataclasses.asdict(self.train_cfg),
                      dtype=str(next(self.model.parameters()).dtype).removeprefix("torch.")),
        )

    def load_state(self, ckpt: dict):
        params = self.named_params()
        with torch.no_grad():
            for n, p in params.items():
                p.copy_(ckpt["params"][n])
                self.shadow[n].copy_(ckpt["shadow"][n])
        self.optimizer.state.clear()
        for name, st in ckpt["adam"].items():
            self.optimizer.state[params[name]] = {k: v.clone() for k, v in st.items()}
        self.step = ckpt["meta"]["step"]
        self.epoch = ckpt["meta"]["epoch"]

    @classmethod
    def from_checkpoint(cls, ckpt: dict) -> "Trainer":
        meta = ckpt["meta"]
        trainer = cls(ModelConfig(**meta["model"]), TrainConfig(**meta["train"]),
                      dtype=getattr(torch, meta.get("dtype", "float32")))
        trainer.load_state(ckpt)
        return trainer


def save_checkpoint(ckpt: dict, path: str | Path):
    """Single ``.npz`` file: ``param/*``, ``shadow/*``, ``adam/<name>/<key>`` and ``meta``."""
    arrays = {}
    for group in ("params", "shadow"):
        for name, t in ckpt[group].items():
            arrays[f"{group}/{name}"] = t.numpy()
    for name, st in ckpt["adam"].items():
        for key, t in st.items():
            arrays[f"adam/{name}/{key}"] = t.numpy()
    arrays["meta"] = np.array(json.dumps(ckpt["meta"]))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = dict(params={}, shadow={}, adam={})
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        for key in z.files:
            if key == "meta":
                continue
            group, rest = key.split("/", 1)
            tensor = torch.from_numpy(z[key].copy())
            if group == "adam":
                name, field = rest.rsplit("/", 1)
                ckpt["adam"].setdefault(name, {})[field] = tensor
            else:
                ckpt[group][rest] = tensor
    ckpt["meta"] = meta
    return ckpt


def model_from_checkpoint(ckpt: dict, use_shadow: bool = True) -> Colorizer:
    """Rebuild the network; by default with the Polyak-averaged weights."""
    cfg = ModelConfig(**ckpt["meta"]["model"])
    model = Colorizer(cfg).to(getattr(torch, ckpt["meta"].get("dtype", "float32")))
    source = ckpt["shadow"] if use_shadow else ckpt["params"]
    model.load_state_dict(source)
    model.eval()
    return model


@dataclass
class RunResult:
    trainer: Trainer
    curves: list[dict]
    steps: list[LossRecord]


def run_regime(model_cfg: ModelConfig, train_cfg: TrainConfig, train_data: Batch,
               val_data: Batch | None = None, init: dict | None = None,
               max_seconds: float | None = None, dtype=torch.float32) -> RunResult:
    """Train one regime for ``train_cfg.epochs`` epochs (or until ``max_seconds``).

    Curves hold one ``train`` row per epoch (mean step losses) and one ``val``
    row per epoch including epoch 0, evaluated with the shadow parameters.
    """
    if train_cfg.regime == "seg_only_pretrained" and init is None:
        raise ValueError("regime seg_only_pretrained needs a pretrained checkpoint (init)")
    trainer = Trainer(model_cfg, train_cfg, dtype)
    if init is not None:
        trainer.init_trunk_from(init)
    curves, steps = [], []
    if val_data is not None:
        curves.append(trainer.evaluate(val_data).row(0, "val"))
    start = time.monotonic()
    for epoch in range(1, train_cfg.epochs + 1):
        records = [trainer.train_step(b) for b in batch_iter(train_data, train_cfg.batch_size,
                                                             train_cfg.seed, epoch)]
        steps.extend(records)
        trainer.epoch = epoch
        mean = LossRecord(*(float(np.mean([getattr(r, f) for r in records]))
                            for f in ("emb", "seg", "gen", "sum")))
        curves.append(mean.row(epoch, "train"))
        if val_data is not None:
            curves.append(trainer.evaluate(val_data).row(epoch, "val"))
        log.info("epoch %d: %s", epoch, curves[-1])
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            log.info("time budget reached after %d epochs", epoch)
            break
    return RunResult(trainer, curves, steps)


def curves_to_csv(curves: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in curves:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def epochs_to_reach(curves: list[dict], threshold: float, split: str = "val",
                    key: str = "L_seg") -> int | None:
    """First epoch whose ``key`` on ``split`` is at or below ``threshold``."""
    for row in curves:
        if row["split"] == split and row["epoch"] > 0 and row[key] <= threshold:
            return row["epoch"]
    return None
