"""Train every ablation variant on a synthetic city and print the score table.

    python scripts/run_ablation.py --regions 64 --communities 4 --seed 7 --epochs 500
"""
import argparse

from cgap import TrainingConfig, generate_synthetic_city, run_ablation_suite
from cgap.trainer import ABLATIONS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--regions", type=int, default=64)
    ap.add_argument("--communities", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--lam", type=float, default=1.0, help="Lasso penalty")
    ap.add_argument("--variants", default=",".join(ABLATIONS))
    args = ap.parse_args()

    graph, labels = generate_synthetic_city(args.regions, args.communities, seed=args.seed)
    config = TrainingConfig(epochs=args.epochs, seed=args.seed)
    variants = args.variants.split(",")
    rows = run_ablation_suite(graph, labels, config, lam=args.lam, variants=variants)
    print(f"{'variant':<14}{'l_total':>10}{'crime_r2':>10}{'checkin_r2':>12}")
    for row in rows:
        print(f"{row['variant']:<14}{row['l_total']:>10.3f}{row['crime_r2']:>10.3f}{row['checkin_r2']:>12.3f}")


if __name__ == "__main__":
    main()
