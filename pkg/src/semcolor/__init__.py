"""Semantics-guided image colorization with a conditional autoregressive generator."""

from semcolor.config import ModelConfig, TrainConfig

__all__ = ["ModelConfig", "TrainConfig"]
__version__ = "0.1.0"
