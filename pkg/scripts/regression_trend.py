"""Rate study for 1-D regression of sin(2 pi x) under white noise.

Writes study.csv and summary.json to the output directory and prints the
fitted log-log slope next to the theoretical exponent.
"""
import argparse
import json

from framenet.erm import RegressionProblem, TrainConfig, rate_study, write_study
from framenet.model import ArchitectureConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/regression")
    ap.add_argument("--n-grid", type=int, nargs="+", default=[128, 256, 512, 1024, 2048, 4096])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--kappa", type=float, default=3.0)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--mc", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    study = rate_study(RegressionProblem(sigma=args.sigma), args.n_grid, args.reps, args.kappa,
                       TrainConfig(epochs=args.epochs), ArchitectureConfig(C_L=1, C_p=4),
                       mc_samples=args.mc, seed=args.seed, threads=args.threads)
    write_study(study, args.out)
    print(json.dumps(study.summary(), indent=2))


if __name__ == "__main__":
    main()
