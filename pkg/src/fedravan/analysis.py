"""Spectrum studies of Full-FT updates, head-count sweeps and run reports."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import adapters as ad
from . import flcore as fl
from . import linalg
from . import model as mdl
from .config import ExperimentConfig
from .errors import ShapeError, TargetNotReachedError
from .experiment import Task, build_state, build_task, fed_from_config, with_overrides
from .linalg import make_stream

REGIMES = ("centralized", "fed_iid", "fed_noniid")
REPORT_COLUMNS = ("round", "strategy", "seed", "train_loss", "eval_loss", "eval_acc", "agg_gap",
                  "upload_bytes", "eff_rank_entropy", "eff_rank_threshold", "head_norms")


# ---------------------------------------------------------------- spectra

@dataclass
class SpectrumReport:
    regime: str
    seed: int
    singular_values: np.ndarray
    effective_rank_entropy: float
    effective_rank_threshold: float
    target_metric_reached: bool
    target_acc: float
    final_acc: float
    evaluations: int

    @property
    def normalized_spectrum(self) -> np.ndarray:
        return self.singular_values / self.singular_values[0]


def _summarize(regime, seed, delta, tau, target, acc, evals) -> SpectrumReport:
    sv = linalg.svd(delta).singular_values
    return SpectrumReport(regime, seed, sv, linalg.effective_rank(sv, linalg.EntropyExp()),
                          linalg.effective_rank(sv, linalg.ThresholdFraction(tau)), True, target,
                          acc, evals)


def centralized_ceiling(task: Task, cfg: ExperimentConfig, seed: int) -> float:
    """Best test accuracy over ``spectra.ceiling_rounds`` blocks of centralized Full-FT."""
    model = task.backbone.clone()
    model.full_ft = True
    state = mdl.AdamState(cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2,
                          cfg.optimizer.eps)
    stream = make_stream(seed, "ceiling")
    best = mdl.evaluate(model, task.test.features, task.test.labels)[1]
    for _ in range(cfg.spectra.ceiling_rounds):
        mdl.train_steps(model, task.train.features, task.train.labels, cfg.federation.local_steps,
                        state, stream, cfg.federation.batch_size)
        best = max(best, mdl.evaluate(model, task.test.features, task.test.labels)[1])
    return best


def _train_centralized(task, cfg, seed, target):
    model = task.backbone.clone()
    model.full_ft = True
    w0 = model.adapted_layer().w.copy()
    state = mdl.AdamState(cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2,
                          cfg.optimizer.eps)
    stream = make_stream(seed, "centralized")
    acc = mdl.evaluate(model, task.test.features, task.test.labels)[1]
    best, evals = acc, 0
    while acc < target:
        if evals == cfg.spectra.max_rounds:
            raise TargetNotReachedError("centralized", target, best, evals)
        mdl.train_steps(model, task.train.features, task.train.labels, cfg.federation.local_steps,
                        state, stream, cfg.federation.batch_size)
        acc = mdl.evaluate(model, task.test.features, task.test.labels)[1]
        best = max(best, acc)
        evals += 1
    return model.adapted_layer().w - w0, acc, evals


def _train_federated(task, cfg, seed, target, mode):
    regime = "fed_iid" if mode == "iid" else "fed_noniid"
    state = build_state(cfg, seed, task, fl.AggregationStrategy("fullft"), partition_mode=mode)
    acc = mdl.evaluate(state.global_model, task.test.features, task.test.labels)[1]
    best, evals = acc, 0
    while acc < target:
        if evals == cfg.spectra.max_rounds:
            raise TargetNotReachedError(regime, target, best, evals)
        record, state = fl.run_round(state)
        acc = record.eval_acc
        best = max(best, acc)
        evals += 1
    return fl.global_delta(state), acc, evals


def spectra_experiment(cfg: ExperimentConfig, seeds: Sequence[int],
                       target_acc: Optional[float] = None) -> List[SpectrumReport]:
    """Full-FT to a common target in each regime; spectra of the adapted-layer update.

    The target defaults to ``spectra.target_fraction`` times the centralized
    ceiling of the same task and seed. Three reports per seed, in ``REGIMES``
    order. A run whose update is zero surfaces ``UndefinedRankError``.
    """
    cfg = with_overrides(cfg, analysis={"track_spectra": False})
    tau = cfg.analysis.eff_rank_tau
    reports = []
    for seed in seeds:
        task = build_task(cfg, seed)
        target = target_acc
        if target is None:
            target = cfg.spectra.target_fraction * centralized_ceiling(task, cfg, seed)
        runs = [("centralized", _train_centralized(task, cfg, seed, target)),
                ("fed_iid", _train_federated(task, cfg, seed, target, "iid")),
                ("fed_noniid", _train_federated(task, cfg, seed, target, "dirichlet"))]
        for regime, (delta, acc, evals) in runs:
            reports.append(_summarize(regime, seed, delta, tau, target, acc, evals))
    return reports


def spectra_ordering(reports: Sequence[SpectrumReport]):
    """Per seed: (outer pair holds, full ordering holds) for entropy effective rank."""
    by_seed = {}
    for rep in reports:
        by_seed.setdefault(rep.seed, {})[rep.regime] = rep.effective_rank_entropy
    out = {}
    for seed, ranks in sorted(by_seed.items()):
        c, i, n = ranks["centralized"], ranks["fed_iid"], ranks["fed_noniid"]
        out[seed] = (c < n, c < i < n)
    return out


# ---------------------------------------------------------------- head sweep

@dataclass
class HeadSweepRow:
    heads: int
    rank: int
    n_params: int
    sqrt_nh: float
    d: int
    saturated: bool
    accuracies: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def is_saturated(n_budget: int, h: int, d: int) -> bool:
    """sqrt(N h) >= d, decided in exact integer arithmetic."""
    return n_budget * h >= d * d


def head_sweep(cfg: ExperimentConfig, n_budget: int, head_counts: Iterable[int],
               seeds: Sequence[int]) -> List[HeadSweepRow]:
    """Federated RAVAN at a fixed budget for each head count, rows sorted by h.

    Head counts with r = 0, or whose bases do not fit the chosen init, are
    skipped with a warning.
    """
    cfg = with_overrides(cfg, analysis={"track_spectra": False})
    d = cfg.task.d
    tasks = {seed: build_task(cfg, seed) for seed in seeds}
    rows = []
    for h in sorted(set(head_counts)):
        r = ad.heads_rank(n_budget, h)
        if r < 1:
            warnings.warn(f"h={h}: budget {n_budget} leaves r=0, skipped")
            continue
        strategy = fl.AggregationStrategy("ravan", rank=r, heads=h,
                                          score_fn=cfg.strategy.score_fn,
                                          trainable_scaling=cfg.strategy.trainable_scaling,
                                          init_scheme=ad.InitScheme(cfg.strategy.init_scheme))
        try:
            accs = []
            for seed in seeds:
                state = build_state(cfg, seed, tasks[seed], strategy)
                records, _ = fl.run_rounds(state, cfg.federation.rounds)
                accs.append(records[-1].eval_acc if records else float("nan"))
        except ShapeError as exc:
            warnings.warn(f"h={h}, r={r}: {exc}; skipped")
            continue
        rows.append(HeadSweepRow(h, r, h * r * r, math.sqrt(n_budget * h), d,
                                 is_saturated(n_budget, h, d), accs))
    return rows


def saturation_check(rows: Sequence[HeadSweepRow]):
    """(first saturated row, best unsaturated row, excess) or None if either is missing.

    ``excess`` is how far the saturated mean exceeds the best unsaturated mean,
    measured in units of the latter's seed std.
    """
    unsat = [r for r in rows if not r.saturated]
    sat = [r for r in rows if r.saturated]
    if not unsat or not sat:
        return None
    first = min(sat, key=lambda r: r.heads)
    best = max(unsat, key=lambda r: r.mean)
    return first, best, first.mean - best.mean


def write_head_sweep(rows: Sequence[HeadSweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["heads", "rank", "n_params", "sqrt_nh", "d", "saturated", "mean_acc", "std_acc"])
        for r in rows:
            w.writerow([r.heads, r.rank, r.n_params, repr(r.sqrt_nh), r.d, int(r.saturated),
                        repr(r.mean), repr(r.std)])


# ---------------------------------------------------------------- reports

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ";".join(repr(float(v)) for v in value)
    return str(value)


def _record_dict(rec: fl.RoundRecord) -> dict:
    return {name: getattr(rec, name) for name in REPORT_COLUMNS}


def format_report(records: Sequence[fl.RoundRecord], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rec in records:
            w.writerow([_cell(getattr(rec, c)) for c in REPORT_COLUMNS])
        return buf.getvalue()
    if fmt == "jsonl":
        extra = ("sampled_clients", "head_counts", "client_upload_bytes")
        lines = []
        for rec in records:
            row = _record_dict(rec)
            row.update({k: getattr(rec, k) for k in extra})
            lines.append(json.dumps(row))
        return "".join(line + "\n" for line in lines)
    raise ValueError(f"unknown report format {fmt!r}")


def write_report(records: Sequence[fl.RoundRecord], path, fmt: Optional[str] = None) -> Path:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix == ".jsonl" else "csv")
    text = format_report(records, fmt)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", str(path)) from exc
    return path


def read_jsonl_report(path) -> List[fl.RoundRecord]:
    names = {f.name for f in fields(fl.RoundRecord)}
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            row = json.loads(line)
            out.append(fl.RoundRecord(**{k: v for k, v in row.items() if k in names}))
    return out


def write_plot_data(path, xs: Sequence[float], ys: Sequence[float]) -> None:
    """Two whitespace-separated numeric columns, one point per line."""
    if len(xs) != len(ys):
        raise ValueError("x and y lengths differ")
    Path(path).write_text("".join(f"{float(x)!r} {float(y)!r}\n" for x, y in zip(xs, ys)))


def write_spectrum_files(reports: Sequence[SpectrumReport], out_dir) -> List[Path]:
    """Per (regime, seed): raw and sigma_1-normalized spectra as index/value columns."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rep in reports:
        idx = range(1, len(rep.singular_values) + 1)
        for kind, values in (("raw", rep.singular_values), ("normalized", rep.normalized_spectrum)):
            p = out_dir / f"{rep.regime}_seed{rep.seed}_{kind}.dat"
            write_plot_data(p, idx, values)
            paths.append(p)
    return paths


def mean_std(values: Sequence[float]):
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())
