"""Flat ``key = value`` configuration covering every config dataclass.

Keys are the dataclass field names, which are unique across groups;
``lambda`` is accepted as an alias for ``lam``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .contrastive import ContrastiveConfig
from .decoder import DecoderConfig, GenerationParams
from .encoder import EncoderConfig
from .graph import GraphConfig
from .model import ModelConfig


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr: float = 1e-3
    batch_size: int = 16
    max_steps: int = 300
    seed: int = 0
    clip_norm: float = 1.0
    use_graph: bool = True
    use_contrastive: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")


@dataclass
class VocabConfig:
    vocab_size: int = 8192
    min_freq: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationParams = field(default_factory=GenerationParams)
    graph: GraphConfig = field(default_factory=GraphConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)

    def groups(self):
        return [self.model.encoder, self.model.decoder, self.model.contrastive, self.train,
                self.generation, self.graph, self.vocab]

    def to_flat(self) -> dict:
        out = {}
        for g in self.groups():
            out.update(dataclasses.asdict(g))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_flat(cls, values: dict) -> "RunConfig":
        values = dict(values)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        group_types = [EncoderConfig, DecoderConfig, ContrastiveConfig, TrainConfig, GenerationParams,
                       GraphConfig, VocabConfig]
        owners = {f.name: (t, f) for t in group_types for f in dataclasses.fields(t)}
        unknown = sorted(set(values) - set(owners))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        kwargs: dict = {t: {} for t in group_types}
        for key, raw in values.items():
            t, f = owners[key]
            kwargs[t][key] = _coerce(raw, f.type, key)
        built = {t: t(**kw) for t, kw in kwargs.items()}
        return cls(
            ModelConfig(built[EncoderConfig], built[DecoderConfig], built[ContrastiveConfig]),
            built[TrainConfig], built[GenerationParams], built[GraphConfig], built[VocabConfig],
        )


# full-scale and per-dataset settings; desk-scale defaults live on the dataclasses
SCALE_PRESETS = {
    "mimic-cxr": {"lr": 2e-4, "batch_size": 128, "max_steps": 150000},
    "openi": {"lr": 5e-3, "batch_size": 128, "max_steps": 20000},
    "full-scale": {"d_model": 768, "text_layers": 12, "text_heads": 12, "text_ff": 3072,
                    "dec_layers": 6, "dec_heads": 8, "dec_ff": 2048, "con_layers": 6,
                    "con_heads": 8, "con_ff": 2048},
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(raw, type_name, key):
    if not isinstance(raw, str):
        return raw
    t = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", str(type_name))
    try:
        if t == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {t}") from None
    return raw.strip()


def parse_flat(text: str) -> dict[str, str]:
    values = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in values:
            raise ValueError(f"config line {no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    values = parse_flat(Path(path).read_text(encoding="utf-8")) if path else {}
    if "preset" in values:
        name = values.pop("preset")
        if name not in SCALE_PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(SCALE_PRESETS)}")
        values = {**{k: str(v) for k, v in SCALE_PRESETS[name].items()}, **values}
    values.update(overrides or {})
    return RunConfig.from_flat(values)
