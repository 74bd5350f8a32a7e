"""RAVAN accuracy against head count at a fixed trainable budget.

    python scripts/run_head_sweep.py --budget 144 --heads 1,2,4,8,16 --out runs/heads.csv
"""
import argparse

from fedravan import analysis as an
from fedravan import config as C


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--budget", type=int, default=144)
    parser.add_argument("--heads", default="1,2,4,8,16")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--rounds", type=int, default=60)
    parser.add_argument("--out", default="runs/head_sweep.csv")
    args = parser.parse_args()

    cfg = C.from_dict({"schema_version": 1, "strategy": {"name": "ravan", "budget": args.budget},
                       "federation": {"rounds": args.rounds}})
    rows = an.head_sweep(cfg, args.budget, [int(h) for h in args.heads.split(",")],
                         [int(s) for s in args.seeds.split(",")])
    an.write_head_sweep(rows, args.out)
    for r in rows:
        flag = "saturated" if r.saturated else ""
        print(f"h={r.heads:<3d} r={r.rank:<3d} sqrt(Nh)={r.sqrt_nh:6.2f} "
              f"acc {r.mean:.3f} ± {r.std:.3f} {flag}")
    check = an.saturation_check(rows)
    if check:
        first, best, excess = check
        print(f"first saturated h={first.heads} vs best unsaturated h={best.heads}: "
              f"{excess:+.3f} (1 std = {best.std:.3f})")


if __name__ == "__main__":
    main()
