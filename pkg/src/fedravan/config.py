"""Versioned YAML experiment configuration.

Unknown keys are errors. Numbers given as strings (YAML 1.1 reads ``5e-3`` as
text) are coerced according to the field's declared type.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml

from . import adapters as ad
from . import flcore as fl
from .errors import ConfigError

SCHEMA_VERSION = 1
PARTITION_MODES = ("iid", "dirichlet")
SWEEP_AXES = ("lr", "heads", "alpha", "budget_dist", "init")


@dataclass
class StrategyConfig:
    name: str
    rank: Optional[int] = None  # derived from ``budget`` when omitted
    heads: int = 4
    budget: Optional[int] = None  # trainable parameters N on the adapted matrix
    score_fn: str = "random"
    trainable_scaling: bool = True
    init_scheme: str = "gram_schmidt"
    reselect_each_step: bool = False
    scale_lr: Optional[float] = None


@dataclass
class FederationConfig:
    n_clients: int = 20
    clients_per_round: int = 3
    rounds: int = 60
    local_steps: int = 50
    batch_size: int = 32
    partition: str = "dirichlet"
    alpha: float = 0.3
    budget_dist: str = "homogeneous"
    min_shard: int = 1


@dataclass
class TaskConfig:
    d: int = 32
    n_classes: int = 10
    n_per_class: int = 250
    n_test_per_class: int = 100
    class_sep: float = 1.5
    shift: float = 3.0
    layers: int = 2
    pretrain_steps: int = 1000
    pretrain_lr: float = 1e-3


@dataclass
class OptimizerConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AnalysisConfig:
    eff_rank_tau: float = 0.01
    track_spectra: bool = True


@dataclass
class SpectraConfig:
    target_fraction: float = 0.9
    ceiling_rounds: int = 40
    max_rounds: int = 200


@dataclass
class SweepConfig:
    # reference grid kept verbatim: 5e-2 appears twice and is deduplicated at sweep time
    lr: List[float] = field(default_factory=lambda: [5e-5, 1e-5, 5e-4, 1e-4, 5e-3, 1e-3, 5e-2,
                                                     1e-2, 5e-2])
    heads: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    alpha: List[float] = field(default_factory=lambda: [0.1, 0.3, 1.0])
    budget_dist: List[str] = field(default_factory=lambda: ["uniform", "bell_shaped", "skewed_right"])
    init: List[str] = field(default_factory=lambda: list(ad.INIT_SCHEMES))


@dataclass
class ExperimentConfig:
    schema_version: int
    strategy: StrategyConfig
    federation: FederationConfig = field(default_factory=FederationConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    spectra: SpectraConfig = field(default_factory=SpectraConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"


def _coerce(value: Any, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:  # Optional[X]
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected true/false, got {value!r}")
    if tp in (int, float):
        if isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {value!r}")
        try:
            out = tp(value) if not isinstance(value, str) else tp(float(value) if tp is float else value)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected {tp.__name__}, got {value!r}") from None
        if tp is int and isinstance(value, float) and value != out:
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return out
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in raw:
            kwargs[f.name] = _coerce(raw[f.name], hints[f.name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "required field is missing")
    return cls(**kwargs)


def _one_of(path, value, allowed):
    if value not in allowed:
        raise ConfigError(path, f"{value!r} is not one of {list(allowed)}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {cfg.schema_version}")
    s, f, t = cfg.strategy, cfg.federation, cfg.task
    _one_of("strategy.name", s.name, fl.STRATEGIES)
    _one_of("strategy.score_fn", s.score_fn, fl.SCORE_FNS)
    _one_of("strategy.init_scheme", s.init_scheme, ad.INIT_SCHEMES)
    _one_of("federation.partition", f.partition, PARTITION_MODES)
    _one_of("federation.budget_dist", f.budget_dist, ("homogeneous",) + tuple(fl.BUDGET_DISTS))
    for name in ("n_clients", "clients_per_round", "batch_size", "min_shard"):
        if getattr(f, name) < 1:
            raise ConfigError(f"federation.{name}", "must be >= 1")
    for name in ("rounds", "local_steps"):
        if getattr(f, name) < 0:
            raise ConfigError(f"federation.{name}", "must be >= 0")
    if f.clients_per_round > f.n_clients:
        raise ConfigError("federation.clients_per_round", "exceeds federation.n_clients")
    if not f.alpha > 0:
        raise ConfigError("federation.alpha", "must be positive")
    if s.heads < 1:
        raise ConfigError("strategy.heads", "must be >= 1")
    if s.name != "fullft":
        if s.rank is None and s.budget is None:
            raise ConfigError("strategy.rank", "set either strategy.rank or strategy.budget")
        if resolved_rank(cfg) < 1:
            raise ConfigError("strategy.budget", "budget too small for a rank-1 adapter")
    if t.layers not in (1, 2):
        raise ConfigError("task.layers", "must be 1 or 2")
    for name in ("d", "n_classes", "n_per_class", "n_test_per_class"):
        if getattr(t, name) < 1:
            raise ConfigError(f"task.{name}", "must be >= 1")
    if not t.class_sep > 0:
        raise ConfigError("task.class_sep", "must be positive")
    if not cfg.optimizer.lr > 0:
        raise ConfigError("optimizer.lr", "must be positive")
    if not cfg.seeds:
        raise ConfigError("seeds", "need at least one seed")
    for axis in ("budget_dist",):
        for v in cfg.sweep.budget_dist:
            _one_of(f"sweep.{axis}", v, ("homogeneous",) + tuple(fl.BUDGET_DISTS))
    for v in cfg.sweep.init:
        _one_of("sweep.init", v, ad.INIT_SCHEMES)
    return cfg


def resolved_rank(cfg: ExperimentConfig) -> int:
    s = cfg.strategy
    if s.rank is not None:
        return s.rank
    return fl.rank_for_budget(s.name, s.budget, cfg.task.d, s.heads if s.name == "ravan" else 1)


def from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, raw, ""))


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"{path} is not valid YAML: {exc}") from exc
    return from_dict(raw if raw is not None else {})


def to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
