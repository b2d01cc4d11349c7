"""Convergence of the coalition formation algorithm: iteration CDFs and their near-max.

    python scripts/iteration_cdf.py --users 20 30 40 50 --tasks 20 --instances 200
"""
import argparse

from ocfsense.harness import ExperimentConfig, iteration_cdf, write_cdf


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--users", type=int, nargs="+", default=[20, 30, 40, 50])
    ap.add_argument("--tasks", type=int, default=20)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--seed-base", type=int, default=0)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    config = ExperimentConfig(
        sweep_var="users", grid=tuple(args.users), n_tasks=args.tasks,
        instances_per_point=args.instances, seed_base=args.seed_base, output_dir=args.out,
    )
    cdf = iteration_cdf(config)
    write_cdf(cdf, config)
    for row in cdf.summary():
        print(f"M={row['n_users']:3d}  mean={row['mean']:7.1f}  p99={row['p99']:7.1f}  max={row['max']}")


if __name__ == "__main__":
    main()
