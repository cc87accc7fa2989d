"""Merged pipeline configuration with strict keys and dotted command-line overrides."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import PreprocessConfig
from .ingest.pipeline import IngestConfig
from .model import ModelConfig
from .stft import StftConfig
from .synth import SynthConfig
from .tensor import ConfigError
from .train import TrainConfig

SCHEMES = ("kfold", "loso")


@dataclass
class EvalConfig:
    scheme: str = "kfold"
    k: int = 5
    seed: int = 0
    workers: int = 1
    leaky_split: bool = False

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"eval.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.k < 2:
            raise ConfigError(f"eval.k must be >= 2, got {self.k}")
        if self.workers < 1:
            raise ConfigError("eval.workers must be >= 1")


@dataclass
class PipelineConfig:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    dsp: PreprocessConfig = field(default_factory=PreprocessConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()

    def with_seed(self, seed: int) -> PipelineConfig:
        """Thread one seed through every stochastic stage."""
        return dataclasses.replace(
            self, model=dataclasses.replace(self.model, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            eval=dataclasses.replace(self.eval, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed))

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        return _build(cls, d, "")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    return obj


def _build(cls, d, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        where = f" in {path.rstrip('.')}" if path else ""
        raise ConfigError(f"unknown config keys{where}: {unknown}")
    kwargs = {}
    for key, value in d.items():
        sub = _dataclass_type(hints[key])
        kwargs[key] = _build(sub, value, f"{path}{key}.") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path.rstrip('.') or 'config'}: {exc}") from exc


def _dataclass_type(hint):
    if dataclasses.is_dataclass(hint):
        return hint
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        for arg in typing.get_args(hint):
            if dataclasses.is_dataclass(arg):
                return arg
    return None


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(tree: dict, overrides) -> dict:
    tree = json.loads(json.dumps(tree))
    for text in overrides or ():
        parts, value = parse_override(text)
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-object")
        node[parts[-1]] = value
    return tree


def read_json(path) -> dict:
    p = Path(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc


def build_config(tree: dict | None = None, overrides=None, seed: int | None = None) -> PipelineConfig:
    """Apply overrides to a config tree, thread the seed and validate every section."""
    cfg = PipelineConfig.from_dict(apply_overrides(tree or {}, overrides))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    cfg.validate()
    return cfg


def load_config(path=None, overrides=None, seed: int | None = None) -> PipelineConfig:
    return build_config(read_json(path) if path is not None else {}, overrides, seed)
