"""Experiment configuration: nested dataclasses loaded from TOML."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .losses import CimConfig, LossWeights
from .selfexpr import PostprocessConfig


class ConfigError(ValueError):
    """User-facing configuration problem (bad key, bad value, missing file)."""


@dataclass
class DataConfig:
    source: str = "synth_subspaces"  # synth_subspaces | synth_images | idx | image_dir | csv
    path: str = ""
    labels_path: str = ""
    extension: str = ""
    k: int = 3
    subspace_dim: int = 4
    ambient_dim: int = 30
    n_per_class: int = 50
    noise_sigma: float = 0.0
    outlier_frac: float = 0.0
    outlier_mag: float = 0.0
    image_size: int = 16
    limit: int = 0  # keep only the first `limit` samples (0 = all)


@dataclass
class ModelConfig:
    # each entry: {filters, kernel, stride}; an empty list gives the shallow model
    encoder: list = field(default_factory=list)
    in_channels: int = 1
    error: str = "cim"
    regularizer: str = "l2"
    optimizer: str = "adam"
    eig_method: str = "auto"


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.0
    lambda4: float = 0.0
    lambda5: float = 0.0
    lambda6: float = 0.0
    gamma: float = 0.01


@dataclass
class CimSection:
    sigma: float = 0.0  # <= 0: median heuristic, recomputed every epoch
    sigma_scale: float = 1.0
    distance: str = "squared"


@dataclass
class PostprocessSection:
    keep_ratio: float = 0.9
    rank: int = 12


@dataclass
class ScheduleConfig:
    ae_epochs: int = 0
    ae_lr: float = 1e-3
    dsc_epochs: int = 1000
    dsc_lr: float = 1e-2
    t_max: int = 0
    t0: int = 30
    warmup: int = 50
    lr_start: float = 1e-3
    lr_min: float = 1e-6
    plateau_patience: int = 20
    plateau_factor: float = 0.5
    plateau_min_delta: float = 1e-5
    early_stop: bool = True
    early_stop_patience: int = 60
    early_stop_min_delta: float = 1e-5
    kmeans_restarts: int = 20


@dataclass
class FoldConfig:
    num_folds: int = 5
    regime: str = "fold_train"  # fold_train | within_fold
    train_fraction: float = 0.7


@dataclass
class OutputConfig:
    record_timing: bool = True


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    cim: CimSection = field(default_factory=CimSection)
    postprocess: PostprocessSection = field(default_factory=PostprocessSection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    folds: FoldConfig = field(default_factory=FoldConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        self.validate()

    # -- derived views -------------------------------------------------------
    @property
    def k(self):
        return self.data.k

    @property
    def weights(self):
        return LossWeights(**dataclasses.asdict(self.loss))

    @property
    def cim_config(self):
        return CimConfig(sigma=self.cim.sigma, distance=self.cim.distance)

    @property
    def postprocess_config(self):
        return PostprocessConfig(self.postprocess.keep_ratio, self.postprocess.rank)

    def with_variant(self, error, regularizer):
        cfg = dataclasses.replace(self, model=dataclasses.replace(self.model, error=error,
                                                                 regularizer=regularizer))
        return cfg

    def validate(self):
        s, m = self.schedule, self.model
        checks = [
            (s.warmup >= 0, "schedule.warmup must be >= 0"),
            (s.t0 >= 1, "schedule.t0 must be >= 1"),
            (0 < s.lr_min <= s.lr_start, "need 0 < schedule.lr_min <= schedule.lr_start"),
            (0 < s.plateau_factor < 1, "schedule.plateau_factor must be in (0, 1)"),
            (min(s.ae_epochs, s.dsc_epochs, s.t_max) >= 0, "epoch budgets must be >= 0"),
            (m.error in ("cim", "mse"), f"model.error must be 'cim' or 'mse', got {m.error!r}"),
            (m.regularizer in ("l2", "bd"), f"model.regularizer must be 'l2' or 'bd', got {m.regularizer!r}"),
            (m.optimizer in ("adam", "sgd"), f"model.optimizer must be 'adam' or 'sgd', got {m.optimizer!r}"),
            (self.cim.distance in ("squared", "euclidean"), "cim.distance must be 'squared' or 'euclidean'"),
            (self.cim.sigma_scale > 0, "cim.sigma_scale must be > 0"),
            (0 < self.postprocess.keep_ratio <= 1, "postprocess.keep_ratio must be in (0, 1]"),
            (self.postprocess.rank >= 1, "postprocess.rank must be >= 1"),
            (self.data.k >= 1, "data.k must be >= 1"),
            (self.folds.regime in ("fold_train", "within_fold"), "folds.regime must be fold_train or within_fold"),
            (self.folds.num_folds >= 1, "folds.num_folds must be >= 1"),
        ]
        for name, value in dataclasses.asdict(self.loss).items():
            checks.append((value >= 0, f"loss.{name} must be >= 0"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for i, layer in enumerate(m.encoder):
            extra = set(layer) - {"filters", "kernel", "stride"}
            if extra or "filters" not in layer:
                raise ConfigError(f"model.encoder[{i}]: expected keys filters, kernel, stride; got {sorted(layer)}")

    # -- (de)serialization ---------------------------------------------------
    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, raw):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in dict(raw).items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            factory = fields[key].default_factory
            if factory is not dataclasses.MISSING:
                kwargs[key] = _section(factory, key, value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


def _section(section_cls, prefix, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section [{prefix}] must be a table")
    names = {f.name: f for f in dataclasses.fields(section_cls)}
    for key in value:
        if key not in names:
            raise ConfigError(f"unknown config key {prefix}.{key!r}")
    out = {}
    for key, v in value.items():
        default = getattr(section_cls(), key)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{prefix}.{key} must be true/false")
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        elif isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float) and v.is_integer():
            v = int(v)
        if type(default) in (int, float, str, list) and not isinstance(v, type(default)):
            raise ConfigError(f"{prefix}.{key} must be of type {type(default).__name__}, got {v!r}")
        out[key] = v
    return section_cls(**out)


def parse_override(text):
    """'section.key=value' -> (('section', 'key'), value); value is parsed as TOML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, value = text.split("=", 1)
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return tuple(key.strip().split(".")), parsed


def apply_overrides(raw, overrides):
    raw = json.loads(json.dumps(raw))
    for text in overrides or ():
        path, value = parse_override(text)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} does not address a config table")
        node[path[-1]] = value
    return raw


def load_config(path, overrides=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    try:
        return ExperimentConfig.from_dict(apply_overrides(raw, overrides))
    except TypeError as err:
        raise ConfigError(str(err)) from err


def dumps_toml(cfg):
    """Render a config as TOML (enough for the value types used here)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{ " + ", ".join(f"{k} = {fmt(x)}" for k, x in v.items()) + " }"
        return str(v)

    d = cfg.to_dict()
    lines = [f"{k} = {fmt(v)}" for k, v in d.items() if not isinstance(v, dict)]
    for k, v in d.items():
        if isinstance(v, dict):
            lines += ["", f"[{k}]"] + [f"{kk} = {fmt(vv)}" for kk, vv in v.items()]
    return "\n".join(lines) + "\n"
