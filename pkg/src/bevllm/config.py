"""Flat ``key = value`` pipeline configuration with built-in profiles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .bev_partition import GridSpec
from .errors import ConfigurationError
from .llm_bridge.toy_lm import ToyLmConfig
from .qformer import QFormerConfig


@dataclass
class PipelineConfig:
    grid_height: int = 4
    grid_width: int = 4
    bev_channels: int = 32  # also the positional encoding width
    num_queries: int = 8
    d_q: int = 32
    qformer_layers: int = 2
    qformer_heads: int = 2
    cross_attention_every: int = 1
    max_text_len: int = 32
    mlp_hidden: int = 128
    d_llm: int = 64
    lm_layers: int = 2
    lm_heads: int = 2
    lm_max_len: int = 128
    vocab_max: int = 2048
    lora_rank: int = 4
    lora_alpha: float = 8.0
    temperature: float = 0.07
    similarity: str = "max"
    w_btc: float = 1.0
    w_btg: float = 1.0
    w_btm: float = 1.0
    w_caption: float = 1.0
    btg_path: str = "qformer"
    seed: int = 0
    lm_seed: int = 1234
    bev_seed: int = 4321
    learning_rate: float = 1e-3
    batch_size: int = 3
    steps: int = 200
    num_scenes: int = 4

    def validate(self) -> "PipelineConfig":
        if self.bev_channels % 2:
            raise ConfigurationError("bev_channels must be even (it is the sinusoidal encoding width)")
        if self.btg_path not in ("qformer", "llm"):
            raise ConfigurationError(f"btg_path must be 'qformer' or 'llm', got {self.btg_path!r}")
        if self.similarity not in ("max", "mean"):
            raise ConfigurationError(f"similarity must be 'max' or 'mean', got {self.similarity!r}")
        if self.batch_size < 1 or self.num_scenes < 1 or self.steps < 0:
            raise ConfigurationError("batch_size and num_scenes must be positive, steps non-negative")
        self.grid()
        self.qformer_config(vocab_size=16).validate()
        return self

    def grid(self) -> GridSpec:
        return GridSpec(height=self.grid_height, width=self.grid_width)

    def qformer_config(self, vocab_size: int) -> QFormerConfig:
        return QFormerConfig(
            bev_channels=self.bev_channels,
            num_queries=self.num_queries,
            d_q=self.d_q,
            num_layers=self.qformer_layers,
            num_heads=self.qformer_heads,
            cross_attention_every=self.cross_attention_every,
            vocab_size=vocab_size,
            max_text_len=self.max_text_len,
            seed=self.seed,
        )

    def lm_config(self, vocab_size: int) -> ToyLmConfig:
        return ToyLmConfig(vocab_size=vocab_size, d_model=self.d_llm, num_layers=self.lm_layers,
                           num_heads=self.lm_heads, max_len=self.lm_max_len, seed=self.lm_seed)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PROFILES = {
    "toy": {},
    "paper-shape": {
        "grid_height": 180,
        "grid_width": 180,
        "bev_channels": 512,
        "num_queries": 512,
        "d_q": 768,
        "qformer_heads": 12,
        "mlp_hidden": 3072,
        "d_llm": 2048,
        "lm_heads": 16,
        "lm_max_len": 1024,
    },
}


def _coerce(field_type, raw: str, key: str):
    try:
        if field_type in (int, "int"):
            return int(raw)
        if field_type in (float, "float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {field_type}") from exc


def profile(name: str = "toy") -> PipelineConfig:
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PipelineConfig(**PROFILES[name]).validate()


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply ``key = value`` lines on top of ``base``; a ``profile`` key selects the base."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key != "profile" and key not in types:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        pairs.append((key, raw))
    values = dict(pairs)
    cfg = profile(values.pop("profile")) if "profile" in values else (base or profile("toy"))
    updates = {k: _coerce(types[k], v, k) for k, v in values.items()}
    return dataclasses.replace(cfg, **updates).validate()


def load_config(path: str | Path | None, profile_name: str = "toy") -> PipelineConfig:
    base = profile(profile_name)
    if path is None:
        return base
    return parse_config(Path(path).read_text(), base)
