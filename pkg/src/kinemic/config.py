"""Declarative run configuration.

One TOML file drives the whole pipeline: corpus generation, retrieval,
pretraining, adaptation, and evaluation.  Unknown keys are rejected, the
schema version is checked, and a loaded config re-serializes to an
equivalent document (round-trip stable modulo formatting).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import ClassifierConfig
from .errors import InvalidConfigError
from .evalsuite import EvalProtocol
from .toy import ToyConfig
from .trainer import PretrainConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PairsConfig:
    k: int = 250
    encoder: str = "hashed-bow"
    template: str = "a person does a {label}"

    def to_dict(self) -> dict:
        return {"k": self.k, "encoder": self.encoder, "template": self.template}

    @classmethod
    def from_dict(cls, d: dict) -> "PairsConfig":
        return cls(**d)


@dataclass(frozen=True)
class ModelSection:
    """Denoiser shape; feature dim and action count are derived from data."""

    width: int = 128
    heads: int = 4
    blocks: int = 8
    ffn_mult: int = 4
    max_len: int = 196
    text_dim: int = 512
    dropout: float = 0.0

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "heads": self.heads,
            "blocks": self.blocks,
            "ffn_mult": self.ffn_mult,
            "max_len": self.max_len,
            "text_dim": self.text_dim,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSection":
        return cls(**d)


@dataclass(frozen=True)
class EvalSection:
    protocol: EvalProtocol = field(default_factory=EvalProtocol)
    test_per_class: int = 100
    test_seed_offset: int = 900001

    def to_dict(self) -> dict:
        d = self.protocol.to_dict()
        d["test_per_class"] = self.test_per_class
        d["test_seed_offset"] = self.test_seed_offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSection":
        d = dict(d)
        test_per_class = d.pop("test_per_class", 100)
        test_seed_offset = d.pop("test_seed_offset", 900001)
        classifier = d.pop("classifier", None)
        proto_kwargs = dict(d)
        if classifier is not None:
            proto_kwargs["classifier"] = ClassifierConfig.from_dict(classifier)
        if "seeds" in proto_kwargs:
            proto_kwargs["seeds"] = tuple(proto_kwargs["seeds"])
        return cls(
            protocol=_build(EvalProtocol, proto_kwargs, "eval"),
            test_per_class=test_per_class,
            test_seed_offset=test_seed_offset,
        )


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidConfigError(f"[{where}]: {exc}") from exc


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out: str = "runs/default"
    data: ToyConfig = field(default_factory=ToyConfig)
    pairs: PairsConfig = field(default_factory=PairsConfig)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "out": self.out,
            "data": self.data.to_dict(),
            "pairs": self.pairs.to_dict(),
            "model": self.model.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise InvalidConfigError(
                f"config schema_version must be {SCHEMA_VERSION}, got {version!r}"
            )
        seed = doc.pop("seed", 0)
        out = doc.pop("out", "runs/default")
        sections = {
            "data": lambda d: _build(ToyConfig.from_dict, {"d": d}, "data"),
            "pairs": lambda d: _build(PairsConfig, d, "pairs"),
            "model": lambda d: _build(ModelSection, d, "model"),
            "pretrain": lambda d: _build(PretrainConfig, d, "pretrain"),
            "train": lambda d: _train_from_dict(d),
            "eval": lambda d: EvalSection.from_dict(d),
        }
        kwargs = {}
        for name, builder in sections.items():
            if name in doc:
                kwargs[name] = builder(doc.pop(name))
        if doc:
            raise InvalidConfigError(f"unknown config keys: {sorted(doc)}")
        return cls(seed=seed, out=out, **kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise InvalidConfigError(f"config not found: {path}")
        with open(path, "rb") as f:
            try:
                doc = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise InvalidConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(to_toml(self.to_dict()), "utf-8")


def _train_from_dict(d: dict):
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:
        raise InvalidConfigError(f"[train]: {exc}") from exc


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise InvalidConfigError(f"cannot serialize {type(v).__name__} to TOML")


def to_toml(doc: dict) -> str:
    """Minimal TOML writer for the flat-sections-with-subtables shape the
    run config uses."""
    lines = []
    tables = []
    for key, value in doc.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif value is not None:
            lines.append(f"{key} = {_toml_scalar(value)}")
    for name, table in tables:
        lines.append("")
        lines.append(f"[{name}]")
        subtables = []
        for key, value in table.items():
            if isinstance(value, dict):
                subtables.append((f"{name}.{key}", value))
            elif value is not None:
                lines.append(f"{key} = {_toml_scalar(value)}")
        for sub_name, sub in subtables:
            lines.append("")
            lines.append(f"[{sub_name}]")
            for key, value in sub.items():
                if value is not None:
                    lines.append(f"{key} = {_toml_scalar(value)}")
    return "\n".join(lines) + "\n"
