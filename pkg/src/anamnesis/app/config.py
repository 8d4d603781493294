"""YAML run configuration with sections data, model, training, curriculum and decoder."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..decoding import DecoderConfig
from ..training import CurriculumConfig, TrainingConfig

SECTIONS = ("data", "model", "training", "curriculum", "decoder")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    corpus: str | None = None
    ontology: str | None = None
    synthetic_size: int = 100
    seed: int = 0


@dataclass
class ModelConfig:
    # "reduced" trains a small BERT from scratch; "pretrained" loads a local checkpoint directory.
    encoder: str = "reduced"
    pretrained_path: str | None = None
    vocab_size: int = 2000
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    intermediate_size: int = 128
    dropout: float = 0.1
    max_length: int = 256
    match_features: bool = True
    tfidf_hidden_width: int = 256

    def __post_init__(self):
        if self.encoder not in ("reduced", "pretrained"):
            raise ConfigError(f"model.encoder must be 'reduced' or 'pretrained', got {self.encoder!r}")
        if self.encoder == "pretrained" and not self.pretrained_path:
            raise ConfigError("model.pretrained_path is required for a pretrained encoder")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def snapshot(self) -> dict:
        out = {"data": asdict(self.data), "model": asdict(self.model)}
        training = asdict(self.training)
        out["curriculum"] = training.pop("curriculum")
        out["training"] = training
        decoder = asdict(self.decoder)
        decoder["max_span_tokens_by_type"] = dict(decoder["max_span_tokens_by_type"])
        out["decoder"] = decoder
        return out


def _build(cls, values: Mapping, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def _coerce(text: str):
    return yaml.safe_load(text)


def parse_config(document: Mapping | None, overrides: Iterable[str] = ()) -> RunConfig:
    """Build a RunConfig from a parsed document and ``section.key=value`` overrides."""
    document = dict(document or {})
    unknown = set(document) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {name: dict(document.get(name) or {}) for name in SECTIONS}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        sections[section][name] = _coerce(value)
    if "distances" in sections["curriculum"]:
        sections["curriculum"]["distances"] = tuple(sections["curriculum"]["distances"])
    if sections["curriculum"].get("fractions") is not None:
        sections["curriculum"]["fractions"] = tuple(sections["curriculum"]["fractions"])
    curriculum = _build(CurriculumConfig, sections["curriculum"], "curriculum")
    training = _build(TrainingConfig, {**sections["training"], "curriculum": curriculum}, "training")
    return RunConfig(
        data=_build(DataConfig, sections["data"], "data"),
        model=_build(ModelConfig, sections["model"], "model"),
        training=training,
        decoder=_build(DecoderConfig, sections["decoder"], "decoder"),
    )


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    document = None
    if path is not None:
        try:
            document = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if document is not None and not isinstance(document, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(document, overrides)


def with_seed(config: RunConfig, seed: int | None) -> RunConfig:
    """Apply a CLI ``--seed`` to every seeded section."""
    if seed is None:
        return config
    return replace(config, data=replace(config.data, seed=seed), training=replace(config.training, seed=seed))
