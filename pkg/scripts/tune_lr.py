"""Learning-rate grid per strategy on held-out tuning seeds.

Seeds here must not overlap the evaluation seeds used by the acceptance suite.

    python scripts/tune_lr.py --seeds 100,101 --rounds 60
"""
import argparse

import numpy as np

from fedravan import config as C
from fedravan.experiment import build_task, run_experiment, with_overrides

STRATEGIES = ("ravan", "fedit", "ffalora", "fedsb")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", default="100,101")
    parser.add_argument("--rounds", type=int, default=60)
    parser.add_argument("--budget", type=int, default=256)
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    base = C.from_dict({"schema_version": 1,
                        "strategy": {"name": "ravan", "budget": args.budget},
                        "federation": {"rounds": args.rounds},
                        "analysis": {"track_spectra": False}})
    grid = list(dict.fromkeys(base.sweep.lr))
    tasks = {seed: build_task(base, seed) for seed in seeds}
    for name in STRATEGIES:
        scores = {}
        for lr in grid:
            cfg = with_overrides(base, strategy={"name": name}, optimizer={"lr": lr})
            accs = [run_experiment(cfg, s, tasks[s])[0][-1].eval_acc for s in seeds]
            scores[lr] = float(np.mean(accs))
            print(f"{name:8s} lr={lr:<8g} acc={scores[lr]:.3f}", flush=True)
        best = max(scores, key=scores.get)
        print(f"{name:8s} best lr={best:g} ({scores[best]:.3f})")


if __name__ == "__main__":
    main()
