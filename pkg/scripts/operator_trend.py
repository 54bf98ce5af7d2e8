"""Rate study for the torus Darcy operator plus the constructive surrogate trend.

Trains FrameNet models on n noisy solves for each n in the grid, then
evaluates constructive surrogates with N Legendre terms.
"""
import argparse
import json
import os

from framenet.darcy import make_darcy_problem
from framenet.erm import OperatorProblem, TrainConfig, rate_study, surrogate_study, write_study
from framenet.model import ArchitectureConfig
from framenet.rates import torus_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/operator")
    ap.add_argument("--n-grid", type=int, nargs="+", default=[100, 400, 1600])
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--s", type=float, default=4.0)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--amplitude", type=float, default=80.0, help="right-hand side amplitude")
    ap.add_argument("--surrogate-N", type=int, nargs="*", default=[4, 8, 16])
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--mc", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    darcy = make_darcy_problem(s=args.s, rhs_amplitude=args.amplitude)
    problem = OperatorProblem(darcy, sigma=args.sigma, threads=args.threads)
    kappa = torus_rate(args.s, darcy.grid.d)[1]
    study = rate_study(problem, args.n_grid, args.reps, kappa, TrainConfig(epochs=args.epochs),
                       ArchitectureConfig(C_L=1, C_p=1), mc_samples=args.mc, seed=args.seed,
                       threads=args.threads)
    write_study(study, args.out)
    summary = study.summary()
    if args.surrogate_N:
        sur = surrogate_study(problem, args.surrogate_N, mc_samples=args.mc, seed=args.seed)
        with open(os.path.join(args.out, "surrogate.csv"), "w") as fh:
            fh.write(sur.to_csv())
        summary["surrogate"] = [list(r) for r in sur.rows]
        summary["surrogate_nonincreasing"] = sur.nonincreasing()
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
