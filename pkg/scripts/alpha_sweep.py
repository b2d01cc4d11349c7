"""Platform utility against incentive intensity for both mechanisms.

    python scripts/alpha_sweep.py --users 60 --tasks 30 --instances 100 --out results
"""
import argparse
import json
import time

from ocfsense.harness import ExperimentConfig, sweep_alpha, write_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--users", type=int, default=60)
    ap.add_argument("--tasks", type=int, default=30)
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seed-base", type=int, default=0)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    base = ExperimentConfig(
        n_users=args.users, n_tasks=args.tasks, instances_per_point=args.instances,
        seed_base=args.seed_base, output_dir=args.out,
    )
    for var, modes in (("alpha1", ("noncoop",)), ("alpha2", ("ocf-priority", "ocf-random"))):
        config = base.replace(sweep_var=var, modes=modes)
        t0 = time.time()
        result = sweep_alpha(config)
        write_sweep(result, config)
        print(f"{var}: best {json.dumps(result.best_alpha)} ({time.time() - t0:.0f}s)")
        for mode in modes:
            mean, se = result.series(mode)
            for a, m, s in zip(result.grid, mean, se):
                print(f"  {mode:13s} {var}={a:4.1f}  U={m:8.2f} +- {s:5.2f}")


if __name__ == "__main__":
    main()
