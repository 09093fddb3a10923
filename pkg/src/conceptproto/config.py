"""Run configuration: JSON file plus CLI overrides.

Exactly one data source is allowed: either explicit file paths
(features/labels/splits and optionally concepts) or an inline synthetic
spec. CLI flags override file values; validation happens before any side
effect.
"""

import json
import os
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .episodes import EpisodeSpec
from .errors import ConfigError
from .model import TrainConfig
from .nncore import DistanceKind
from .model import WeightMode


@dataclass
class ModelConfig:
    weight_mode: WeightMode = WeightMode.PER_CONCEPT
    distance: DistanceKind = DistanceKind.SQ_EUCLIDEAN
    hidden_dim: int = 64
    embed_dim: int = 64
    dropout: float = 0.2
    whole_input_concept: bool = True
    zscore: bool = False

    def validate(self):
        if self.hidden_dim < 1 or self.embed_dim < 1:
            raise ConfigError("hidden_dim and embed_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self


@dataclass
class RunConfig:
    features: str | None = None
    labels: str | None = None
    splits: str | None = None
    concepts: str | None = None
    synthetic: SyntheticSpec | None = None
    episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    out_dir: str = "runs/out"

    def validate(self, require_data=True):
        has_files = self.features is not None
        has_synth = self.synthetic is not None
        if require_data:
            if has_files == has_synth:
                raise ConfigError(
                    "exactly one of (features/labels/splits paths, synthetic spec) required"
                )
            if has_files:
                for name in ("features", "labels", "splits"):
                    path = getattr(self, name)
                    if path is None:
                        raise ConfigError(f"missing '{name}' path")
                    if not os.path.exists(path):
                        raise ConfigError(f"{name} file not found: {path}")
                if self.concepts is not None and not os.path.exists(self.concepts):
                    raise ConfigError(f"concepts file not found: {self.concepts}")
            else:
                self.synthetic.validate()
        self.episode.validate()
        self.train.validate()
        self.model.validate()
        return self


def _take(raw, cls, **renames):
    """Build a dataclass from a dict, rejecting unknown keys."""
    allowed = set(cls.__dataclass_fields__)
    kwargs = {}
    for key, value in raw.items():
        name = renames.get(key, key)
        if name not in allowed:
            raise ConfigError(f"unknown config key '{key}' for {cls.__name__}")
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = RunConfig()
    for key in ("features", "labels", "splits", "concepts", "out_dir"):
        if key in raw and raw[key] is not None:
            setattr(cfg, key, str(raw[key]))
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    if raw.get("synthetic") is not None:
        cfg.synthetic = _take(raw["synthetic"], SyntheticSpec)
    if "episode" in raw:
        cfg.episode = _take(raw["episode"], EpisodeSpec)
    if "train" in raw:
        cfg.train = _take(raw["train"], TrainConfig)
    if "model" in raw:
        mraw = dict(raw["model"])
        if "weight_mode" in mraw:
            mraw["weight_mode"] = WeightMode(mraw["weight_mode"])
        if "distance" in mraw:
            mraw["distance"] = DistanceKind(mraw["distance"])
        cfg.model = _take(mraw, ModelConfig)
    known = {
        "features", "labels", "splits", "concepts", "out_dir", "seed",
        "synthetic", "episode", "train", "model",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return cfg
