"""Crime R^2 as a function of the loss weight beta."""
import argparse

from cgap import TrainingConfig, generate_synthetic_city
from cgap.trainer import DEFAULT_BETAS, beta_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--regions", type=int, default=64)
    ap.add_argument("--communities", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--betas", default=",".join(map(str, DEFAULT_BETAS)))
    args = ap.parse_args()

    graph, labels = generate_synthetic_city(args.regions, args.communities, seed=args.seed)
    betas = [float(b) for b in args.betas.split(",")]
    for row in beta_sweep(graph, labels, TrainingConfig(epochs=args.epochs, seed=args.seed), betas, lam=args.lam):
        bar = "#" * max(0, int(40 * row["r2"]))
        print(f"beta={row['beta']:.2f}  r2={row['r2']:+.3f}  {bar}")


if __name__ == "__main__":
    main()
