"""Command-line runner: ``fedravan {run,sweep,spectra,verify}``.

Exit codes: 0 success, 1 runtime or invariant failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from . import analysis as an
from . import config as C
from . import model as mdl
from . import verify as vf
from .errors import ConfigError, ShapeError
from . import flcore as fl
from .experiment import build_state, with_overrides

OUT_ENV = "FEDRAVAN_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("--seeds", f"expected comma-separated integers, got {text!r}") from None


def _resolve(args) -> C.ExperimentConfig:
    cfg = C.load(args.config)
    if getattr(args, "seeds", None):
        cfg.seeds = _parse_seeds(args.seeds)
        C.validate(cfg)
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir
    cfg.output_dir = str(out)
    return cfg


def run_seed(cfg: C.ExperimentConfig, seed: int, out_dir: Path) -> float:
    """One seed: records, resolved config and summary inside ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    state = build_state(cfg, seed)
    records, state = fl.run_rounds(state, cfg.federation.rounds)
    final_acc = mdl.evaluate(state.global_model, state.test.features, state.test.labels)[1]
    an.write_report(records, out_dir / "records.csv")
    an.write_report(records, out_dir / "records.jsonl")
    resolved = copy.deepcopy(cfg)
    resolved.seeds = [seed]
    (out_dir / "config.resolved").write_text(C.dump(resolved))
    summary = {"strategy": cfg.strategy.name, "seed": seed, "rounds": cfg.federation.rounds,
               "final_acc": final_acc,
               "final_eval_loss": records[-1].eval_loss if records else None}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return final_acc


def _run_cell(cfg: C.ExperimentConfig, out_root: Path, jobs: int):
    strategy_dir = out_root / cfg.strategy.name
    dirs = [strategy_dir / str(seed) for seed in cfg.seeds]
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            accs = list(pool.map(run_seed, [cfg] * len(dirs), cfg.seeds, dirs))
    else:
        accs = [run_seed(cfg, seed, d) for seed, d in zip(cfg.seeds, dirs)]
    mean, std = an.mean_std(accs)
    summary = {"strategy": cfg.strategy.name, "seeds": cfg.seeds, "final_acc": accs,
               "mean": mean, "std": std}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return accs


def cmd_run(args) -> int:
    cfg = _resolve(args)
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    accs = _run_cell(cfg, out_root, args.jobs)
    for seed, acc in zip(cfg.seeds, accs):
        print(f"{cfg.strategy.name} {seed} {acc!r}")
    return EXIT_OK


def _axis_override(cfg: C.ExperimentConfig, axis: str, value) -> C.ExperimentConfig:
    if axis == "lr":
        return with_overrides(cfg, optimizer={"lr": value})
    if axis == "heads":
        changes = {"heads": value}
        if cfg.strategy.budget is not None:
            changes["rank"] = None  # keep N fixed, re-derive r
        return with_overrides(cfg, strategy=changes)
    if axis == "alpha":
        return with_overrides(cfg, federation={"alpha": value})
    if axis == "budget_dist":
        return with_overrides(cfg, federation={"budget_dist": value})
    if axis == "init":
        return with_overrides(cfg, strategy={"init_scheme": value})
    raise ConfigError("--axis", f"unknown axis {axis!r}; expected one of {list(C.SWEEP_AXES)}")


def sweep_values(cfg: C.ExperimentConfig, axis: str) -> list:
    """Axis values from the config, duplicates removed (first occurrence kept)."""
    if axis not in C.SWEEP_AXES:
        raise ConfigError("--axis", f"unknown axis {axis!r}; expected one of {list(C.SWEEP_AXES)}")
    values = list(dict.fromkeys(getattr(cfg.sweep, axis)))
    if not values:
        raise ConfigError(f"sweep.{axis}", "no values to sweep")
    return values


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    out_root = Path(cfg.output_dir)
    cells = []
    for value in sweep_values(cfg, args.axis):
        cell_cfg = C.validate(_axis_override(cfg, args.axis, value))
        cell_dir = out_root / f"{args.axis}={value}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        try:
            accs = _run_cell(cell_cfg, cell_dir, args.jobs)
        except ShapeError as exc:
            warnings.warn(f"{args.axis}={value}: {exc}; cell skipped")
            continue
        mean, std = an.mean_std(accs)
        cells.append({"axis": args.axis, "value": value, "mean": mean, "std": std,
                      "final_acc": accs})
        print(f"{args.axis}={value} {mean!r} {std!r}")
    if not cells:
        print("no feasible sweep cells", file=sys.stderr)
        return EXIT_RUNTIME
    best = max(cells, key=lambda c: c["mean"])
    (out_root / "sweep_summary.json").write_text(json.dumps({"cells": cells, "best": best},
                                                            indent=2) + "\n")
    print(f"best {args.axis}={best['value']} {best['mean']!r}")
    return EXIT_OK


def cmd_spectra(args) -> int:
    cfg = _resolve(args)
    out_root = Path(cfg.output_dir) / "spectra"
    reports = an.spectra_experiment(cfg, cfg.seeds)
    an.write_spectrum_files(reports, out_root)
    ordering = an.spectra_ordering(reports)
    means = {}
    for regime in an.REGIMES:
        values = [r.effective_rank_entropy for r in reports if r.regime == regime]
        means[regime] = an.mean_std(values)
    summary = {
        "reports": [{"regime": r.regime, "seed": r.seed, "eff_rank_entropy": r.effective_rank_entropy,
                     "eff_rank_threshold": r.effective_rank_threshold, "target_acc": r.target_acc,
                     "final_acc": r.final_acc, "evaluations": r.evaluations,
                     "target_metric_reached": r.target_metric_reached} for r in reports],
        "mean_eff_rank_entropy": {k: v[0] for k, v in means.items()},
        "std_eff_rank_entropy": {k: v[1] for k, v in means.items()},
        "ordering": {str(s): {"outer": o, "full": f} for s, (o, f) in ordering.items()},
    }
    (out_root / "spectra_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for regime, (mean, std) in means.items():
        print(f"{regime} {mean:.4f} {std:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = vf.run_all()
    print(vf.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed invariants: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedravan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or config output_dir)")
        p.add_argument("--seeds", help="comma-separated seeds, overriding the config")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("run", help="federated run per seed"))
    sweep = sub.add_parser("sweep", help="one run set per value of a sweep axis")
    common(sweep)
    sweep.add_argument("--axis", required=True, choices=C.SWEEP_AXES)
    common(sub.add_parser("spectra", help="Full-FT update spectra across data regimes"))
    sub.add_parser("verify", help="run the invariant suite")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "spectra": cmd_spectra, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
