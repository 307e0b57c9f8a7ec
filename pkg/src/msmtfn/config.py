"""Model configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

ALL_TASKS = ("five", "four", "three", "two")


@dataclass
class ModelConfig:
    """Architecture dimensions. Defaults are the full-scale settings."""

    d_audio: int = 768
    d_text: int = 768
    max_audio_len: int = 999
    max_text_len: int = 199
    d_model: int = 768
    n_heads: int = 4
    d_ff: int = 3072
    pathway_depth: int = 4
    bottleneck_layers: int = 2
    bottleneck_tokens: int = 4
    gru_layers: int = 2
    gru_hidden: int = 128
    dropout: float = 0.3
    tasks: tuple = ALL_TASKS
    positional: bool = True
    use_bottleneck: bool = True
    share_bottleneck: bool = False
    segment_vector: str = "pool"  # "pool" (masked mean of T) or "fsn_mean"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        problems = []
        for name in ("d_audio", "d_text", "max_audio_len", "max_text_len", "d_model", "n_heads",
                     "d_ff", "pathway_depth", "bottleneck_tokens", "gru_layers", "gru_hidden"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.bottleneck_layers < 0:
            problems.append("bottleneck_layers must be >= 0")
        if self.n_heads >= 1 and self.d_model % self.n_heads:
            problems.append(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if not self.tasks or "five" not in self.tasks or set(self.tasks) - set(ALL_TASKS):
            problems.append(f"tasks must include 'five' and be drawn from {ALL_TASKS}")
        if self.segment_vector not in ("pool", "fsn_mean"):
            problems.append("segment_vector must be 'pool' or 'fsn_mean'")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be float32 or float64")
        if problems:
            raise ValueError("invalid ModelConfig: " + "; ".join(problems))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Small dimensions for tests and desk-scale training."""
        base = dict(d_audio=12, d_text=12, max_audio_len=32, max_text_len=16, d_model=8, n_heads=4,
                    d_ff=16, pathway_depth=2, bottleneck_layers=2, bottleneck_tokens=4,
                    gru_layers=2, gru_hidden=5, dropout=0.0)
        base.update(overrides)
        return cls(**base)
