"""Build every constructive network and check its certificate.

Exits nonzero if any certificate fails.
"""
import argparse
import sys

from framenet.cli import verification_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--legendre-max-degree", type=int, default=8)
    ap.add_argument("--repu-max-factors", type=int, default=8)
    args = ap.parse_args()
    rows = verification_suite(args.legendre_max_degree, args.repu_max_factors)
    for name, measured, tol, mpar, passed in rows:
        print(f"{'ok  ' if passed else 'FAIL'} {name:24s} err={measured:.2e} tol={tol:.0e} mpar={mpar:g}")
    return 0 if all(r[4] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
