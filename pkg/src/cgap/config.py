"""Training configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

ATTENTION_MODES = ("literal", "gated", "no_global")
POOLING_MODES = ("attention", "linear")
DATA_MODES = ("both", "poi_only", "mobility_only")


@dataclass
class TrainingConfig:
    dim: int = 128
    lr: float = 1e-3
    epochs: int = 2000
    dropout: float = 0.5
    beta: float = 0.3
    mu: int = 4
    alpha: float | tuple[float, ...] = 1.0  # one value for all layers, or one per layer
    gcn_layers: int = 2
    attention_mode: str = "gated"
    pooling: str = "attention"
    data_mode: str = "both"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.alpha, list):
            self.alpha = tuple(self.alpha)
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.mu < 2:
            raise ValueError("mu must be >= 2")
        alphas = self.alpha if isinstance(self.alpha, tuple) else (self.alpha,)
        if not all(a > 0 for a in alphas):
            raise ValueError("alpha must be positive")
        if self.gcn_layers < 0:
            raise ValueError("gcn_layers must be >= 0")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.data_mode not in DATA_MODES:
            raise ValueError(f"data_mode must be one of {DATA_MODES}")

    def alpha_for(self, layer: int) -> float:
        if isinstance(self.alpha, tuple):
            return self.alpha[min(layer, len(self.alpha) - 1)]
        return float(self.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["alpha"], tuple):
            d["alpha"] = list(d["alpha"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainingConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> TrainingConfig:
        d = self.to_dict()
        d.update(changes)
        return TrainingConfig.from_dict(d)
