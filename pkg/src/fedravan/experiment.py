"""Wiring from an ``ExperimentConfig`` and a seed to tasks, federated states and runs."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from . import adapters as ad
from . import data
from . import flcore as fl
from . import model as mdl
from .config import ExperimentConfig, resolved_rank
from .linalg import make_stream


@dataclass
class Task:
    train: data.Dataset
    test: data.Dataset
    backbone: mdl.ToyModel
    source: data.Dataset


def pretrain_backbone(ds: data.Dataset, n_layers: int, steps: int, lr: float, seed: int,
                      batch_size: int = 32) -> mdl.ToyModel:
    """Random network, then ``steps`` centralized Full-FT steps on ``ds``."""
    model = mdl.build_toy_model(ds.d, ds.n_classes, make_stream(seed, "backbone"), n_layers)
    if steps:
        model.full_ft = True
        mdl.train_steps(model, ds.features, ds.labels, steps, mdl.AdamState(lr),
                        make_stream(seed, "pretrain"), batch_size)
        model.full_ft = False
    return model


def build_task(cfg: ExperimentConfig, seed: int) -> Task:
    t = cfg.task
    shifted = data.make_shifted_task(t.n_classes, t.d, t.n_per_class, t.n_test_per_class,
                                     t.class_sep, t.shift, make_stream(seed, "data"))
    backbone = pretrain_backbone(shifted.source, t.layers, t.pretrain_steps, t.pretrain_lr, seed,
                                 cfg.federation.batch_size)
    return Task(shifted.train, shifted.test, backbone, shifted.source)


def strategy_from_config(cfg: ExperimentConfig) -> fl.AggregationStrategy:
    s = cfg.strategy
    rank = 1 if s.name == "fullft" else resolved_rank(cfg)
    return fl.AggregationStrategy(
        tag=s.name,
        rank=rank,
        heads=s.heads if s.name == "ravan" else 1,
        score_fn=s.score_fn,
        trainable_scaling=s.trainable_scaling,
        init_scheme=ad.InitScheme(s.init_scheme),
        reselect_each_step=s.reselect_each_step,
        scale_lr=s.scale_lr,
    )


def fed_from_config(cfg: ExperimentConfig, seed: int) -> fl.FedConfig:
    f, o = cfg.federation, cfg.optimizer
    return fl.FedConfig(seed=seed, clients_per_round=f.clients_per_round, local_steps=f.local_steps,
                        batch_size=f.batch_size, lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                        eff_rank_tau=cfg.analysis.eff_rank_tau,
                        track_spectra=cfg.analysis.track_spectra)


def partition_spec(cfg: ExperimentConfig, seed: int, mode: Optional[str] = None) -> data.PartitionSpec:
    f = cfg.federation
    return data.PartitionSpec(f.n_clients, mode or f.partition, f.alpha, seed, f.min_shard)


def build_state(cfg: ExperimentConfig, seed: int, task: Optional[Task] = None,
                strategy: Optional[fl.AggregationStrategy] = None,
                partition_mode: Optional[str] = None) -> fl.FederatedState:
    task = task or build_task(cfg, seed)
    strategy = strategy or strategy_from_config(cfg)
    shards = data.partition(task.train, partition_spec(cfg, seed, partition_mode))
    budgets = fl.sample_budgets(len(shards), cfg.federation.budget_dist, make_stream(seed, "budgets"))
    return fl.setup_federation(task.train, task.test, shards, strategy, fed_from_config(cfg, seed),
                               budgets, n_layers=cfg.task.layers, backbone=task.backbone)


def run_experiment(cfg: ExperimentConfig, seed: int, task: Optional[Task] = None,
                   **round_kwargs) -> Tuple[List[fl.RoundRecord], fl.FederatedState]:
    state = build_state(cfg, seed, task)
    return fl.run_rounds(state, cfg.federation.rounds, **round_kwargs)


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Copy of ``cfg`` with fields replaced per section, e.g. ``strategy={"heads": 8}``."""
    out = cfg
    for section, changes in sections.items():
        out = replace(out, **{section: replace(getattr(out, section), **changes)})
    return out
