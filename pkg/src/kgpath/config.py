"""Run configuration: one flat JSON-serialisable dataclass with typo-guarded loading."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .embedding import PretrainConfig
from .synth import SynthConfig
from .trainer import TrainConfig

SEED_ENV = "KGPF_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    out: str = "runs/default"
    seed: int = 0
    # embedding pretraining
    model: str = "complex"
    dim: int = 100
    negatives: int = 10
    embed_batch_size: int = 256
    embed_lr: float = 1e-3
    embed_epochs: int = 500
    embed_patience: int = 20
    embed_eval_every: int = 5
    embed_l2: float = 0.0
    # policy training
    max_steps: int = 3
    max_loops: int = 2
    action_cap: int = 200
    num_rollouts: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 400
    patience: int = 30
    aggregator: str = "scalar_product"
    dropout: str = "dad"
    dropout_rate: float = 0.5
    dad_standardize: bool = True
    gk_form: str = "raw"
    use_local: bool = True
    use_global: bool = True
    use_attention: bool = True
    baseline: bool = False
    clip_norm: float = 5.0
    mask_query_edge: bool = True
    valid_beam: int = 32
    valid_limit: int = 0
    filtered: bool = True
    # evaluation
    beam: int = 128
    split: str = "test"
    emit_paths: bool = False
    # synthetic data
    distances: list = (2, 3, 4, 5, 6, 7)
    n_chains: int = 50
    entities_per_layer: int = 0
    distractor_ratio: float = 2.0
    distractor_relations: int = 4
    symmetric: bool = False

    def __post_init__(self):
        self.distances = list(self.distances)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(self.model, self.dim, self.negatives, self.embed_batch_size,
                              self.embed_lr, self.embed_epochs, self.embed_patience,
                              self.embed_eval_every, self.embed_l2)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(asdict(self))

    def synth_config(self) -> SynthConfig:
        return SynthConfig(tuple(self.distances), self.n_chains, self.entities_per_layer,
                           self.distractor_ratio, self.distractor_relations, self.symmetric,
                           seed=self.seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value, from_text: bool):
    default = getattr(RunConfig(), key)
    kind = type(default)
    if from_text and isinstance(value, str):
        if kind is bool:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ConfigError(f"{key}: expected a boolean, got {value!r}")
            return value.lower() in ("true", "1")
        if kind is list:
            return [int(x) for x in value.split(",") if x]
        try:
            return kind(value)
        except ValueError as err:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from err
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is list and isinstance(value, (list, tuple)):
        return list(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``overrides`` (later wins); KGPF_SEED beats all."""
    values: dict = {}
    if path:
        text = Path(path).read_text().strip()
        loaded = json.loads(text) if text else {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value, from_text=False)
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value, from_text=isinstance(value, str))
    if os.environ.get(SEED_ENV):
        values["seed"] = _coerce("seed", os.environ[SEED_ENV], from_text=True)
    return RunConfig(**values)
