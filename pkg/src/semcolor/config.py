"""Model and training configuration, plus the flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

FUSION_MODES = ("concat", "feature_transform", "embedding_only")
REGIMES = ("joint", "color_only", "seg_only_scratch", "seg_only_pretrained")
IGNORE_LABEL = 255


def scale_channels(ref_channels: int, base_channels: int) -> int:
    """Scale a channel count from the 64-base reference network."""
    return max(1, round(ref_channels * base_channels / 64))


@dataclass
class ModelConfig:
    input_size: int = 32
    base_channels: int = 16
    num_classes: int = 4
    mixture_components: int = 10
    embedding_channels: int = 0  # 0 -> 160 scaled by base_channels / 64
    fusion_mode: str = "concat"
    generator_layers: int = 2
    generator_channels: int = 32
    generator_kernel: int = 3
    bins: int = 256

    def __post_init__(self):
        if self.input_size < 4 or self.input_size % 4:
            raise ValueError(f"input_size must be a positive multiple of 4, got {self.input_size}")
        for name in ("base_channels", "num_classes", "mixture_components",
                     "generator_layers", "generator_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embedding_channels < 0:
            raise ValueError("embedding_channels must be >= 0")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.generator_kernel < 1 or self.generator_kernel % 2 == 0:
            raise ValueError("generator_kernel must be odd")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")

    @classmethod
    def reference(cls, num_classes: int = 21, **overrides) -> "ModelConfig":
        """Full-size network: 128x128 input, 64 base channels, 160-d embedding."""
        kw = dict(input_size=128, base_channels=64, num_classes=num_classes,
                  embedding_channels=160, generator_layers=4, generator_channels=128)
        kw.update(overrides)
        return cls(**kw)

    def width(self, ref_channels: int) -> int:
        return scale_channels(ref_channels, self.base_channels)

    @property
    def emb_channels(self) -> int:
        return self.embedding_channels or self.width(160)

    @property
    def gen_size(self) -> int:
        return self.input_size // 4


@dataclass
class TrainConfig:
    lr: float = 0.001
    adam_beta1: float = 0.95
    adam_beta2: float = 0.9995
    polyak_decay: float = 0.9995
    polyak_warmup: bool = True
    lambda_emb: float = 1.0
    lambda_seg: float = 100.0
    lambda_gen: float = 1.0
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    regime: str = "joint"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.polyak_decay <= 1.0:
            raise ValueError("polyak_decay must lie in [0, 1]")
        if min(self.lambda_emb, self.lambda_seg, self.lambda_gen) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.lambda_emb, self.lambda_seg, self.lambda_gen)


# Values stated for the full-size system; shown next to defaults in dumps and --help.
REFERENCE_DEFAULTS = {
    "input_size": 128,
    "base_channels": 64,
    "mixture_components": 10,
    "embedding_channels": 160,
    "lr": 0.001,
    "adam_beta1": 0.95,
    "adam_beta2": 0.9995,
    "lambda_emb": 1.0,
    "lambda_seg": 100.0,
    "lambda_gen": 1.0,
}


def _parse_value(raw: str, typ):
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def _field_types(cls) -> dict:
    return {f.name: f.type for f in fields(cls)}


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_configs(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Split a flat key/value mapping into model and training configs."""
    mtypes, ttypes = _field_types(ModelConfig), _field_types(TrainConfig)
    mkw, tkw = {}, {}
    for key, raw in values.items():
        if key in mtypes:
            mkw[key] = _parse_value(str(raw), mtypes[key])
        elif key in ttypes:
            tkw[key] = _parse_value(str(raw), ttypes[key])
        else:
            raise KeyError(f"unknown config key: {key}")
    return ModelConfig(**mkw), TrainConfig(**tkw)


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    return build_configs(parse_config_text(Path(path).read_text()))


def dump_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = []
    for cfg in (model_cfg, train_cfg):
        for key, value in dataclasses.asdict(cfg).items():
            note = f"  # reference: {REFERENCE_DEFAULTS[key]}" if key in REFERENCE_DEFAULTS else ""
            lines.append(f"{key} = {value}{note}")
    return "\n".join(lines) + "\n"
