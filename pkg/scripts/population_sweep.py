"""Platform utility against the number of users (or tasks), each mechanism at its best alpha.

    python scripts/population_sweep.py --var users --grid 20 40 60 80 100 --fixed 25
    python scripts/population_sweep.py --var tasks --grid 10 20 30 40 50 --fixed 80
"""
import argparse
import json
import time

from ocfsense.harness import ExperimentConfig, sweep_population, write_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--var", choices=("users", "tasks"), default="users")
    ap.add_argument("--grid", type=int, nargs="+", default=[20, 40, 60, 80, 100])
    ap.add_argument("--fixed", type=int, default=25, help="task count (users sweep) or user count (tasks sweep)")
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--tune-instances", type=int, default=20)
    ap.add_argument("--seed-base", type=int, default=0)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    fixed = {"n_tasks": args.fixed} if args.var == "users" else {"n_users": args.fixed}
    config = ExperimentConfig(
        sweep_var=args.var, grid=tuple(args.grid), instances_per_point=args.instances,
        tune_instances=args.tune_instances, seed_base=args.seed_base, output_dir=args.out,
        modes=("centralized", "noncoop", "ocf-priority", "ocf-random"), **fixed,
    )
    t0 = time.time()
    result = sweep_population(config)
    write_sweep(result, config)
    print(f"best alpha: {json.dumps(result.best_alpha)} ({time.time() - t0:.0f}s)")
    for mode in config.modes:
        mean, se = result.series(mode)
        pfm, _ = result.series(mode, "pfm")
        print(mode)
        for v, m, s, f in zip(result.grid, mean, se, pfm):
            print(f"  {args.var}={v:4d}  U={m:8.2f} +- {s:5.2f}  PFM={f:8.2f}")
    for better, worse in (("centralized", "ocf-priority"), ("ocf-priority", "noncoop")):
        gap = result.paired_gap(better, worse)
        print(f"{better} - {worse}: " + "  ".join(f"{m:.1f}({s:.1f})" for m, s in gap))


if __name__ == "__main__":
    main()
