from __future__ import annotations

from dataclasses import asdict, dataclass

MODES = ("encoder_classifier", "encoder_decoder")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 128
    vocab_size: int = 259
    n_classes: int = 5
    max_positions: int = 128
    dropout_sublayer: float = 0.3
    dropout_attention: float = 0.2
    mode: str = "encoder_classifier"
    n_decoder_layers: int | None = None
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("dropout_sublayer", "dropout_attention"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name}={p} outside [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ff, self.vocab_size,
               self.n_classes, self.max_positions) < 1:
            raise ValueError("all model dimensions must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def decoder_layers(self) -> int:
        return self.n_layers if self.n_decoder_layers is None else self.n_decoder_layers

    @classmethod
    def toy(cls, vocab_size: int, **overrides) -> "ModelConfig":
        return cls(**{"n_layers": 2, "d_model": 32, "n_heads": 4, "d_ff": 128,
                      "vocab_size": vocab_size, **overrides})

    @classmethod
    def reference(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Checkpoint-shaped preset: 6 layers, 768 dims, 12 heads."""
        return cls(**{"n_layers": 6, "d_model": 768, "n_heads": 12, "d_ff": 3072,
                      "vocab_size": vocab_size, "max_positions": 512, **overrides})

    @classmethod
    def preset(cls, name: str, vocab_size: int, **overrides) -> "ModelConfig":
        if name not in ("toy", "reference"):
            raise ValueError(f"unknown model preset {name!r}")
        return getattr(cls, name)(vocab_size, **overrides)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)
