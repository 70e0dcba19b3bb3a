"""Declarative run configuration: one YAML file plus flag overrides.

Precedence is overrides > file > defaults. The seed is mandatory and
never defaulted from the clock, so identical configs give identical
runs. Unknown keys are rejected (they are usually typos).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .synth import SynthConfig
from .training import TrainConfig

MODEL_CHOICES = ("deeptransport", "rw", "arima", "fnn", "saes")


@dataclass(frozen=True)
class PathsSection:
    graph_edges: str = ""
    graph_attrs: str = ""
    conditions: str = ""


@dataclass(frozen=True)
class DataSection:
    history_len: int = 12
    radius: int = 5
    slot_width: int = 8
    horizons: tuple = (3, 6, 9, 12)
    train_fraction: float = 0.8
    timestamp_kind: str = "auto"
    strict: bool = True


@dataclass(frozen=True)
class NetSection:
    embed_dim: int = 32
    feature_maps: int = 4
    hidden: int = 32
    attn_hidden: int = 32


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 1100
    workers: int = 11
    shard_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 20
    max_steps: int | None = None
    patience: int = 5
    eval_every: int = 50
    val_fraction: float = 0.1


@dataclass(frozen=True)
class SynthSection:
    n_vertices: int = 200
    mean_out_degree: float = 2.0
    days: int = 14
    propagation_prob: float = 0.9
    decay_prob: float = 0.15
    seed_base_rate: float = 1.5e-5
    rush_peaks: tuple = ((480, 85.0, 3.5e-4), (1080, 85.0, 3.5e-4))
    jam_level: int = 4
    max_jam_depth: int = 5
    missing_prob: float = 0.0


@dataclass(frozen=True)
class EvalSection:
    models: tuple = ()
    checkpoints: dict = field(default_factory=dict)
    rw_seed: int = 0
    bin_minutes: int = 30
    rmse_horizons: tuple = ()
    batch_size: int = 4096


@dataclass(frozen=True)
class ArimaSection:
    max_p: int = 5
    max_d: int = 2
    max_q: int = 5
    workers: int = 1


@dataclass(frozen=True)
class FnnSection:
    hidden: int = 32


@dataclass(frozen=True)
class SaesSection:
    layers: tuple = (256, 256, 256, 256)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: str = "deeptransport"
    out_dir: str = "runs/out"
    suppress_wall_time: bool = False
    nmi_max_radius: int = 5
    paths: PathsSection = field(default_factory=PathsSection)
    data: DataSection = field(default_factory=DataSection)
    net: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    synth: SynthSection = field(default_factory=SynthSection)
    eval: EvalSection = field(default_factory=EvalSection)
    arima: ArimaSection = field(default_factory=ArimaSection)
    fnn: FnnSection = field(default_factory=FnnSection)
    saes: SaesSection = field(default_factory=SaesSection)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            history_len=self.data.history_len, radius=self.data.radius,
            slot_width=self.data.slot_width, embed_dim=self.net.embed_dim,
            feature_maps=self.net.feature_maps, hidden=self.net.hidden,
            attn_hidden=self.net.attn_hidden, horizons=tuple(self.data.horizons),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **dataclasses.asdict(self.train))

    def synth_config(self) -> SynthConfig:
        return SynthConfig(seed=self.seed, **dataclasses.asdict(self.synth))

    def eval_models(self) -> tuple:
        models = tuple(self.eval.models) or (self.model,)
        for m in models:
            if m not in MODEL_CHOICES:
                raise ConfigError(f"unknown model {m!r}; choices: {MODEL_CHOICES}")
        return models

    def config_hash(self) -> str:
        blob = json.dumps(as_plain_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_SECTIONS = {
    "paths": PathsSection, "data": DataSection, "net": NetSection,
    "train": TrainSection, "synth": SynthSection, "eval": EvalSection,
    "arima": ArimaSection, "fnn": FnnSection, "saes": SaesSection,
}


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build_section(cls, raw: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{where}'")
    try:
        return cls(**{k: _coerce(v) for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section '{where}': {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    if "seed" not in raw:
        raise ConfigError("config must set 'seed' (runs never default to the clock)")
    top = {}
    for key in ("seed", "model", "out_dir", "suppress_wall_time", "nmi_max_radius"):
        if key in raw:
            top[key] = raw.pop(key)
    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.pop(name, {}) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        sections[name] = _build_section(cls, body, name)
    if raw:
        raise ConfigError(f"unknown top-level key(s): {sorted(raw)}")
    if top.get("model", "deeptransport") not in MODEL_CHOICES:
        raise ConfigError(f"unknown model {top['model']!r}; choices: {MODEL_CHOICES}")
    try:
        return RunConfig(**top, **sections)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply `a.b.c=value` strings; values parse as YAML scalars."""
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY.PATH=VALUE")
        path, _, value = item.partition("=")
        keys = path.strip().split(".")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {value!r}: {exc}") from exc
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-section key")
        node[keys[-1]] = parsed
    return out


def load_config(path, overrides=None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    return config_from_dict(apply_overrides(raw, overrides))


def as_plain_dict(cfg: RunConfig) -> dict:
    def plain(x):
        if dataclasses.is_dataclass(x):
            return {f.name: plain(getattr(x, f.name)) for f in fields(x)}
        if isinstance(x, (tuple, list)):
            return [plain(v) for v in x]
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        return x

    return plain(cfg)
