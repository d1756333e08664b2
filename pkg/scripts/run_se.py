"""Spectral-efficiency CDFs of the distortion-aware receivers with perfect statistics.

Usage: python scripts/run_se.py [--config configs/desk_se.json] [--out results/se]
"""

import argparse
import sys

from nlmimo import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/desk_se.json")
    p.add_argument("--out", default="results/se")
    args = p.parse_args()
    return cli.main(["se-cdf", "--config", args.config, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
